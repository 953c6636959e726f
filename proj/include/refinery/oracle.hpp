#pragma once
// Exact solve-rate oracle for the synthetic environment.
//
// For a noiseless verifier the engine's per-stream trajectory is a Markov
// chain on (previous wrong-set, current wrong-set) pairs: the critic policy
// is a deterministic function of that pair, and generation/edit transitions
// factor per binding. Reaching the empty wrong-set is absorbing (the stream
// stops on a perfect score and selection takes the maximum over all verified
// candidates), so the full-solve probability of a run is
//   1 - (1 - p_stream)^M
// with p_stream computed by dynamic programming over T rounds.

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "refinery/core.hpp"
#include "refinery/simenv.hpp"

namespace refinery {

struct OraclePolicy {
    std::set<Action> allowed_actions = all_actions();
    Action disallowed_action_fallback = Action::Continue;
};

namespace oracle_detail {

constexpr std::uint32_t kNoPrev = 1u << 12;  // k <= 12, so masks use bits 0..11

inline std::uint32_t pack(std::uint32_t prev, std::uint32_t cur) { return (prev << 13) | cur; }

struct Pows {
    std::vector<double> broke, kept;  // r^i, (1-r)^i
    explicit Pows(double r, int k) : broke(k + 1), kept(k + 1) {
        broke[0] = kept[0] = 1.0;
        for (int i = 1; i <= k; ++i) {
            broke[i] = broke[i - 1] * r;
            kept[i] = kept[i - 1] * (1.0 - r);
        }
    }
};

}  // namespace oracle_detail

// Distribution of the wrong-set mask of one fresh generation.
inline std::vector<double> generation_wrong_mask_dist(const SimParams& params) {
    const double g = params.gen_success();
    const std::uint32_t full = params.k == 0 ? 0 : ((1u << params.k) - 1u);
    std::vector<double> dist(full + 1, 0.0);
    for (std::uint32_t m = 0; m <= full; ++m) {
        const int wrong = __builtin_popcount(m);
        dist[m] = std::pow(1.0 - g, wrong) * std::pow(g, params.k - wrong);
    }
    return dist;
}

// Probability that one stream reaches a fully-correct candidate within
// `rounds` rounds (one generation plus rounds-1 critic-guided steps).
inline double oracle_stream_solve_prob(const SimParams& params, int rounds,
                                       const OraclePolicy& policy = {}) {
    using namespace oracle_detail;
    params.validate();
    if (rounds < 1) throw ConfigError("oracle rounds must be >= 1");
    if (params.k > 12)
        throw OracleUnsupported("oracle supports k <= 12, got k=" + std::to_string(params.k));
    if (params.fn != 0.0 || params.fp != 0.0)
        throw OracleUnsupported("oracle requires a noiseless verifier (fn=fp=0)");
    if (params.k == 0) return 1.0;

    const int k = params.k;
    const std::uint32_t full = (1u << k) - 1u;
    const auto gen = generation_wrong_mask_dist(params);
    const Pows pows(params.r, k);

    double solved = gen[0];
    std::unordered_map<std::uint32_t, double> states;
    states.reserve(1u << k);
    for (std::uint32_t m = 1; m <= full; ++m)
        if (gen[m] > 0.0) states[pack(kNoPrev, m)] = gen[m];

    // Targeted edit on a base wrong-set; outcomes accumulate into `next`
    // with the new previous-mask fixed to the pre-edit current mask.
    auto apply_edit = [&](std::unordered_map<std::uint32_t, double>& next, double& solved_acc,
                          double p, std::uint32_t base_wrong, int target,
                          std::uint32_t new_prev) {
        const std::uint32_t target_bit = 1u << target;
        const bool target_wrong = (base_wrong & target_bit) != 0;
        const double p_fix = target_wrong ? params.q : 1.0;
        const std::uint32_t others_correct = full & ~base_wrong & ~target_bit;
        const int n_others = __builtin_popcount(others_correct);

        auto emit = [&](std::uint32_t wrong_after, double prob) {
            if (prob == 0.0) return;
            if (wrong_after == 0)
                solved_acc += prob;
            else
                next[pack(new_prev, wrong_after)] += prob;
        };

        std::uint32_t sub = others_correct;
        while (true) {
            const int broke = __builtin_popcount(sub);
            const double p_sub = pows.broke[broke] * pows.kept[n_others - broke];
            emit((base_wrong & ~target_bit) | sub, p * p_fix * p_sub);
            if (p_fix < 1.0) emit(base_wrong | sub, p * (1.0 - p_fix) * p_sub);
            if (sub == 0) break;
            sub = (sub - 1) & others_correct;
        }
    };

    for (int round = 2; round <= rounds; ++round) {
        std::unordered_map<std::uint32_t, double> next;
        next.reserve(states.size() * 2 + 8);
        double solved_gain = 0.0;
        for (const auto& [key, p] : states) {
            const std::uint32_t prev = key >> 13;
            const std::uint32_t cur = key & 0x1fffu;

            std::optional<Score> prev_score;
            if (prev != kNoPrev) prev_score = Score{k - __builtin_popcount(prev), k};
            CriticDecision decision =
                sim_critic(cur, Score{k - __builtin_popcount(cur), k}, prev_score, params);
            Action action = decision.action;
            if (!policy.allowed_actions.count(action)) action = policy.disallowed_action_fallback;
            if (action == Action::Backtrack && prev == kNoPrev)
                action = Action::Continue;  // history too short; engine falls back the same way

            const int target = __builtin_ctz(cur);
            switch (action) {
                case Action::Stop:
                    break;  // stream ends unsolved; mass leaves the chain
                case Action::Continue:
                    apply_edit(next, solved_gain, p, cur, target, cur);
                    break;
                case Action::Backtrack:
                    apply_edit(next, solved_gain, p, prev, target, cur);
                    break;
                case Action::Restart:
                    solved_gain += p * gen[0];
                    for (std::uint32_t m = 1; m <= full; ++m)
                        if (gen[m] > 0.0) next[pack(cur, m)] += p * gen[m];
                    break;
            }
        }
        solved += solved_gain;
        states = std::move(next);
        if (states.empty()) break;
    }
    return solved;
}

// Exact full-solve probability of the engine's policy for budget T x M.
inline double oracle_solve_rate(const SimParams& params, const Budget& budget,
                                const OraclePolicy& policy = {}) {
    validate_budget(budget.total_units, budget.rounds, budget.streams);
    const double p_stream = oracle_stream_solve_prob(params, budget.rounds, policy);
    return 1.0 - std::pow(1.0 - p_stream, budget.streams);
}

// Pure parallel sampling baseline: best of M single generations.
inline double closed_form_parallel_solve_rate(const SimParams& params, int streams) {
    const double per_image = std::pow(params.gen_success(), params.k);
    return 1.0 - std::pow(1.0 - per_image, streams);
}

}  // namespace refinery
