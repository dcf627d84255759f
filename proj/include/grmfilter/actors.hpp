#pragma once

// Contracts for the three external actors: the agent policy, the environment
// (executor + verifiable reward) and the GRM judge.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "grmfilter/core.hpp"
#include "grmfilter/detail/random.hpp"
#include "grmfilter/errors.hpp"

namespace grmfilter {

struct SamplingParams {
    double temperature = 1.0;
    std::size_t max_response_length = 4096;
    std::uint64_t seed = 0;
};

/// Agent policy. Implementations must be safe for concurrent calls.
class Policy {
public:
    virtual ~Policy() = default;

    virtual std::string descriptor() const = 0;

    /// Draws `n` independent candidates. Candidate k must depend only on (state, seed, k).
    virtual std::vector<Action> sample(const State& state, std::size_t n, std::uint64_t seed) const = 0;
};

/// N independent draws from the same state. Returned in sampling order.
inline std::vector<Action> sample_candidates(const Policy& policy, const State& state, std::size_t n,
                                             std::size_t horizon, std::uint64_t seed) {
    if (n == 0) throw ContractError("sample_candidates: N must be at least 1");
    if (is_terminal(state, horizon)) throw ContractError("sample_candidates: state is terminal");
    auto out = policy.sample(state, n, seed);
    if (out.size() != n)
        throw RolloutAbort("policy " + policy.descriptor() + " returned " + std::to_string(out.size()) +
                           " candidates, expected " + std::to_string(n));
    return out;
}

struct RewardOutcome {
    int value = 0;
    std::string detail;
};

struct EnvironmentCapabilities {
    bool deterministic = true;
    bool snapshot = false;
};

class Environment;

/// Frozen copy of an environment. Restoring after the source environment is gone is an error.
class SnapshotHandle {
public:
    SnapshotHandle() = default;

    bool valid() const noexcept { return frozen_ != nullptr; }

private:
    friend class Environment;
    friend std::unique_ptr<Environment> restore(const SnapshotHandle& handle);

    SnapshotHandle(std::weak_ptr<const void> owner, std::shared_ptr<const Environment> frozen)
        : owner_(std::move(owner)), frozen_(std::move(frozen)) {}

    std::weak_ptr<const void> owner_;
    std::shared_ptr<const Environment> frozen_;
};

/// Executor plus verifiable reward for one task. Single-owner: at most one execute() may be in
/// flight per instance; parallel branches hold separate instances obtained via snapshot/restore.
class Environment {
public:
    Environment() = default;
    Environment(const Environment&) = delete;
    Environment& operator=(const Environment&) = delete;
    virtual ~Environment() = default;

    virtual std::string descriptor() const = 0;
    virtual EnvironmentCapabilities capabilities() const = 0;

    /// Executes `action` in context `state`. Tool failures come back as observations with an
    /// error tag; only crashes of the backend raise (as RolloutAbort).
    Observation execute(const State& state, const Action& action) {
        if (action.is_null()) throw ContractError("execute: null action");
        if (finished_) throw ContractError("execute: episode already finished");
        if (busy_.exchange(true)) throw ContractError("execute: concurrent use of a single-owner environment");
        struct Release {
            std::atomic<bool>& flag;
            ~Release() { flag = false; }
        } release{busy_};
        if (action.kind == ActionKind::finish) {
            finished_ = true;
            return Observation::finish();
        }
        try {
            return do_execute(state, action);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw RolloutAbort(descriptor() + ": environment crashed: " + e.what());
        }
    }

    SnapshotHandle snapshot() const {
        if (!capabilities().snapshot) throw CapabilityError(descriptor() + " does not support snapshots");
        std::shared_ptr<const Environment> frozen = clone();
        return SnapshotHandle(std::weak_ptr<const void>(alive_), std::move(frozen));
    }

    /// Binary verifiable reward of a trajectory padded to its horizon.
    RewardOutcome terminal_reward(const Trajectory& trajectory) const {
        if (trajectory.steps.empty() || count_real_steps(trajectory.steps) != trajectory.real_length)
            throw ContractError("terminal_reward: trajectory is not padded");
        RewardOutcome r;
        try {
            r = do_terminal_reward(trajectory);
        } catch (const RewardEvaluationError&) {
            throw;
        } catch (const std::exception& e) {
            throw RewardEvaluationError(descriptor() + ": reward harness failed: " + e.what());
        }
        if (r.value != 0 && r.value != 1) throw RewardEvaluationError("reward harness returned a non-binary value");
        return r;
    }

protected:
    virtual Observation do_execute(const State& state, const Action& action) = 0;
    virtual RewardOutcome do_terminal_reward(const Trajectory& trajectory) const = 0;
    /// Deep copy of the current state. Required only when capabilities().snapshot is true.
    virtual std::unique_ptr<Environment> clone() const {
        throw CapabilityError(descriptor() + " does not support snapshots");
    }

    /// For clone() implementations: carries the finished flag over.
    void copy_episode_flags_from(const Environment& other) noexcept { finished_ = other.finished_; }

private:
    friend std::unique_ptr<Environment> restore(const SnapshotHandle& handle);

    std::shared_ptr<const int> alive_ = std::make_shared<const int>(0);
    std::atomic<bool> busy_{false};
    bool finished_ = false;
};

/// Fresh, independent environment positioned at the snapshot.
inline std::unique_ptr<Environment> restore(const SnapshotHandle& handle) {
    if (!handle.valid()) throw ContractError("restore: empty snapshot handle");
    if (handle.owner_.expired()) throw ContractError("restore: stale snapshot handle (environment disposed)");
    return handle.frozen_->clone();
}

enum class JudgePurpose { turn, pair };

/// A judging request. `prompt` is the assembled GRM prompt; the structured fields carry the
/// same content in machine-readable form for judges that do not read prose.
struct JudgeRequest {
    JudgePurpose purpose = JudgePurpose::turn;
    std::string prompt;
    State prefix;
    /// Turn: one single-step candidate each (null observations). Pair: the two segments in
    /// presentation order.
    std::vector<std::vector<Step>> candidates;
};

/// Generative reward model. Returns raw judge text. Must be safe for concurrent calls.
class Judge {
public:
    virtual ~Judge() = default;
    virtual std::string descriptor() const = 0;
    virtual std::string judge(const JudgeRequest& request) const = 0;
};

}  // namespace grmfilter
