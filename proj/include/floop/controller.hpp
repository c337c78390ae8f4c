#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>

#include "floop/errors.hpp"

namespace floop {

using FeedbackVector = std::array<double, 3>;
using MemorySignal = std::array<double, 3>;

inline constexpr FeedbackVector kZero3{0.0, 0.0, 0.0};

struct PidGains {
    double kp = 1.0;
    double ki = 0.5;
    double kd = 0.1;
};

/// Controller memory carried across samples: running error sum and previous error.
struct PidState {
    double integral = 0.0;
    double prev_error = 0.0;
    std::uint64_t step_count = 0;
    double integral_bound = 10.0;  // anti-windup clamp; +inf disables it
};

struct PidStepResult {
    double u = 0.0;
    double derivative_term = 0.0;  // kd * (e - e_prev)
    PidState state;
};

/// One discrete PID transition. Pure: the input state is left untouched.
/// The error is integrated first, then the sum is clamped to +-integral_bound.
inline PidStepResult pid_step(const PidState& state, const PidGains& gains, double error) {
    if (!std::isfinite(error)) throw NonFiniteError("pid_step: non-finite error");
    PidStepResult r;
    r.state = state;
    r.state.integral =
        std::clamp(state.integral + error, -state.integral_bound, state.integral_bound);
    r.derivative_term = gains.kd * (error - state.prev_error);
    r.u = gains.kp * error + gains.ki * r.state.integral + r.derivative_term;
    r.state.prev_error = error;
    r.state.step_count = state.step_count + 1;
    return r;
}

/// Fresh state with the same clamp bound.
inline PidState reset(const PidState& state) {
    PidState fresh;
    fresh.integral_bound = state.integral_bound;
    return fresh;
}

/// 7-dimensional control signal [u, f1..f3, k1..k3].
struct ControlVector {
    double u = 0.0;
    FeedbackVector f = kZero3;
    MemorySignal k = kZero3;

    std::array<double, 7> flatten() const {
        return {u, f[0], f[1], f[2], k[0], k[1], k[2]};
    }

    bool is_finite() const {
        for (double v : flatten()) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static ControlVector from_flat(std::span<const double> raw) {
        if (raw.size() != 7)
            throw InvalidControlError("control vector must have dimension 7, got " +
                                      std::to_string(raw.size()));
        return ControlVector{raw[0], {raw[1], raw[2], raw[3]}, {raw[4], raw[5], raw[6]}};
    }
};

inline ControlVector assemble_training_control(double u, const FeedbackVector& f,
                                               const MemorySignal& k) {
    ControlVector c{u, f, k};
    if (!c.is_finite()) throw NonFiniteError("assemble_training_control: non-finite input");
    return c;
}

/// Inference-time scalar action derived from the memory signal.
struct PolicyConfig {
    std::array<double, 3> weights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    double u_max = 2.0;
};

inline double inference_policy_u(const MemorySignal& k, const PolicyConfig& policy) {
    if (policy.u_max <= 0.0) throw ConfigError("policy.u_max must be positive");
    for (double v : k) {
        if (!std::isfinite(v)) throw NonFiniteError("inference_policy_u: non-finite memory signal");
    }
    const double raw =
        policy.weights[0] * k[0] + policy.weights[1] * k[1] + policy.weights[2] * k[2];
    return std::clamp(raw, -policy.u_max, policy.u_max);
}

/// No judge at inference: f is identically zero.
inline ControlVector assemble_inference_control(const MemorySignal& k,
                                                const PolicyConfig& policy) {
    return ControlVector{inference_policy_u(k, policy), kZero3, k};
}

}  // namespace floop
