#pragma once

#include "floop/agents.hpp"
#include "floop/backends.hpp"
#include "floop/config.hpp"
#include "floop/controller.hpp"
#include "floop/digest.hpp"
#include "floop/embedding.hpp"
#include "floop/errors.hpp"
#include "floop/evalmetrics.hpp"
#include "floop/knowledge_base.hpp"
#include "floop/manifest.hpp"
#include "floop/pipelines.hpp"
#include "floop/prompt_mapper.hpp"
#include "floop/trace.hpp"
