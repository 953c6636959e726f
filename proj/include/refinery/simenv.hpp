#pragma once
// Synthetic compositional environment. Images are bit vectors of concept
// bindings; generation resolves each binding with a capacity-limited success
// probability, edits fix one targeted binding but can break others, and the
// verifier observes bindings through optional false-negative/false-positive
// noise. Implements all four backend roles so the engine runs offline, and
// backs the exact DP oracle.

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "refinery/backends.hpp"
#include "refinery/core.hpp"

namespace refinery {

// splitmix64; used everywhere a seed is derived from run/stream/round keys.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e9b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

template <typename... Rest>
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, Rest... rest) {
    return mix64(mix64(a, b), static_cast<std::uint64_t>(rest)...);
}

inline std::uint64_t hash_str(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Parameters and images
// ---------------------------------------------------------------------------

struct SimParams {
    int k = 5;           // binding count
    double p0 = 0.9;     // base per-binding generation success
    int c = 3;           // capacity: bindings jointly resolvable at full fidelity
    double alpha = 0.8;  // per-excess-binding decay
    double q = 0.8;      // edit fixes the targeted binding with this probability
    double r = 0.05;     // each previously-correct binding breaks per edit with this probability
    double fn = 0.0;     // verifier false-negative rate (correct observed wrong)
    double fp = 0.0;     // verifier false-positive rate (wrong observed correct)
    double restart_threshold = 0.25;
    std::uint64_t seed = 0;

    void validate() const {
        auto prob = [](double v, const char* name) {
            if (v < 0.0 || v > 1.0) throw ConfigError(std::string("sim ") + name + " outside [0,1]");
        };
        prob(p0, "p0");
        prob(q, "q");
        prob(r, "r");
        prob(fn, "fn");
        prob(fp, "fp");
        prob(restart_threshold, "restart_threshold");
        if (k < 0) throw ConfigError("sim k must be >= 0");
        if (c < 1) throw ConfigError("sim c must be >= 1");
        if (alpha <= 0.0 || alpha > 1.0) throw ConfigError("sim alpha outside (0,1]");
    }

    // Per-binding generation success g(k): p0 up to capacity, geometric decay beyond.
    double gen_success() const {
        if (k <= c) return p0;
        double g = p0;
        for (int i = c; i < k; ++i) g *= alpha;
        return g;
    }
};

// Bit i set = binding i rendered correctly.
struct SimImage {
    int k = 0;
    std::uint32_t correct_mask = 0;

    std::uint32_t full_mask() const { return k >= 32 ? ~0u : ((1u << k) - 1u); }
    std::uint32_t wrong_mask() const { return full_mask() & ~correct_mask; }
    int wrong_count() const { return __builtin_popcount(wrong_mask()); }
    bool solved() const { return wrong_mask() == 0; }
};

// ---------------------------------------------------------------------------
// Environment dynamics
// ---------------------------------------------------------------------------

inline SimImage sim_generate(const SimParams& params, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double g = params.gen_success();
    SimImage img{params.k, 0};
    for (int i = 0; i < params.k; ++i)
        if (u(rng) < g) img.correct_mask |= (1u << i);
    return img;
}

// Targeted fix: the target becomes correct with probability q (stays correct
// if it already was); every other currently-correct binding independently
// breaks with probability r. Wrong non-target bindings stay wrong.
inline SimImage sim_edit(const SimImage& image, int target, const SimParams& params,
                         std::mt19937_64& rng) {
    if (target < 0 || target >= image.k)
        throw ConfigError("sim edit target " + std::to_string(target) + " outside [0, " +
                          std::to_string(image.k) + ")");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SimImage out = image;
    const std::uint32_t target_bit = 1u << target;
    // Draw order is fixed (target first, then ascending bindings) so results
    // are reproducible for a given rng state.
    const bool target_ok = (image.correct_mask & target_bit) ? true : (u(rng) < params.q);
    for (int i = 0; i < image.k; ++i) {
        const std::uint32_t bit = 1u << i;
        if (bit == target_bit) continue;
        if ((image.correct_mask & bit) && u(rng) < params.r) out.correct_mask &= ~bit;
    }
    if (target_ok)
        out.correct_mask |= target_bit;
    else
        out.correct_mask &= ~target_bit;
    return out;
}

// Observed binding mask: correct bindings flip to 0 with probability fn,
// wrong ones flip to 1 with probability fp.
inline std::uint32_t sim_observe(const SimImage& image, const SimParams& params,
                                 std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uint32_t observed = 0;
    for (int i = 0; i < image.k; ++i) {
        const bool truth = (image.correct_mask >> i) & 1u;
        bool seen = truth;
        if (truth && params.fn > 0.0 && u(rng) < params.fn) seen = false;
        if (!truth && params.fp > 0.0 && u(rng) < params.fp) seen = true;
        if (seen) observed |= (1u << i);
    }
    return observed;
}

inline VerifierReport report_from_observation(std::uint32_t observed, int k,
                                              const std::vector<std::string>& questions) {
    VerifierReport report;
    report.mode = ScoreMode::Binary;
    int yes = 0;
    for (int i = 0; i < k; ++i) {
        const int verdict = (observed >> i) & 1u;
        yes += verdict;
        std::string question = i < static_cast<int>(questions.size())
                                   ? questions[i]
                                   : "Is binding " + std::to_string(i) + " rendered correctly?";
        report.answers.push_back({std::move(question), verdict});
    }
    // Zero bindings: vacuously perfect.
    report.score = k == 0 ? Score{1, 1} : Score::binary(yes, k);
    return report;
}

inline VerifierReport sim_verify(const SimImage& image, const SimParams& params,
                                 std::mt19937_64& rng) {
    return report_from_observation(sim_observe(image, params, rng), image.k, {});
}

// ---------------------------------------------------------------------------
// Deterministic critic policy on the observed report:
//   all observed correct                -> STOP
//   score strictly below previous round -> BACKTRACK
//   score below restart threshold       -> RESTART
//   otherwise                           -> CONTINUE on the lowest observed-wrong
// Sub-prompts are machine-readable "fix:<i>".
// ---------------------------------------------------------------------------

inline CriticDecision sim_critic(std::uint32_t observed_wrong_mask, const Score& score,
                                 const std::optional<Score>& prev_score,
                                 const SimParams& params) {
    if (observed_wrong_mask == 0) return CriticDecision{Action::Stop, "", "sim:stop"};
    const int target = __builtin_ctz(observed_wrong_mask);
    const std::string sub = "fix:" + std::to_string(target);
    if (prev_score && score < *prev_score) return CriticDecision{Action::Backtrack, sub, "sim:backtrack"};
    if (score.value() < params.restart_threshold) return CriticDecision{Action::Restart, sub, "sim:restart"};
    return CriticDecision{Action::Continue, sub, "sim:continue"};
}

inline CriticDecision sim_critic(const SimImage&, const VerifierReport& report,
                                 const std::optional<Score>& prev_score, int /*round*/,
                                 int /*max_rounds*/, const SimParams& params) {
    std::uint32_t wrong = 0;
    for (std::size_t i = 0; i < report.answers.size(); ++i)
        if (report.answers[i].verdict == 0) wrong |= (1u << i);
    return sim_critic(wrong, report.score, prev_score, params);
}

// ---------------------------------------------------------------------------
// ImageRef encoding. The provenance seed is embedded so identical binding
// vectors from different streams still carry distinct bytes, which keeps
// content-keyed verifier noise decorrelated and deterministic.
// ---------------------------------------------------------------------------

inline ImageRef sim_image_to_ref(const SimImage& img, std::uint64_t provenance_seed) {
    std::ostringstream out;
    out << "SIMG1;k=" << img.k << ";ok=";
    for (int i = 0; i < img.k; ++i) out << ((img.correct_mask >> i) & 1u);
    out << ";seed=" << std::hex << provenance_seed;
    ImageRef ref;
    ref.media_type = "application/x-simg";
    ref.bytes = out.str();
    return ref;
}

inline SimImage sim_image_from_ref(const ImageRef& ref) {
    const std::string& s = ref.bytes;
    if (s.rfind("SIMG1;", 0) != 0) throw ProtocolError("not a sim image: " + s.substr(0, 32));
    std::size_t kpos = s.find("k=");
    std::size_t okpos = s.find("ok=");
    if (kpos == std::string::npos || okpos == std::string::npos)
        throw ProtocolError("malformed sim image: " + s);
    SimImage img;
    img.k = std::stoi(s.substr(kpos + 2));
    for (int i = 0; i < img.k; ++i)
        if (s.at(okpos + 3 + i) == '1') img.correct_mask |= (1u << i);
    return img;
}

// ---------------------------------------------------------------------------
// Backend adapters
// ---------------------------------------------------------------------------

class SimGenerator final : public GeneratorIface {
public:
    explicit SimGenerator(SimParams params) : params_(params) {}

    ImageRef generate(const std::string&, const std::string&, std::uint64_t seed) override {
        std::mt19937_64 rng(mix64(params_.seed, seed, 0x67656eull));
        return sim_image_to_ref(sim_generate(params_, rng), seed);
    }

private:
    SimParams params_;
};

class SimEditor final : public EditorIface {
public:
    explicit SimEditor(SimParams params) : params_(params) {}

    ImageRef edit(const ImageRef& base, const std::string& instruction,
                  std::uint64_t seed) override {
        SimImage img = sim_image_from_ref(base);
        int target = parse_fix_target(instruction);
        if (target < 0 || target >= img.k) {
            // Free-text instruction (non-sim critic): fall back to the lowest
            // truly-wrong binding, or binding 0 when the image is solved.
            target = img.wrong_mask() ? __builtin_ctz(img.wrong_mask()) : 0;
        }
        if (img.k == 0) return sim_image_to_ref(img, seed);
        std::mt19937_64 rng(mix64(params_.seed, seed, 0x656469ull));
        return sim_image_to_ref(sim_edit(img, target, params_, rng), seed);
    }

    static int parse_fix_target(const std::string& instruction) {
        std::size_t pos = instruction.find("fix:");
        if (pos == std::string::npos) return -1;
        try {
            return std::stoi(instruction.substr(pos + 4));
        } catch (const std::exception&) {
            return -1;
        }
    }

private:
    SimParams params_;
};

class SimVerifier final : public VerifierIface {
public:
    explicit SimVerifier(SimParams params) : params_(params) {}

    VerifierReport verify(const ImageRef& image, const TaskPrompt& task) override {
        SimImage img = sim_image_from_ref(image);
        // Noise is keyed by image content, so the observation is a pure
        // function of (params, image) independent of stream scheduling.
        std::mt19937_64 rng(mix64(params_.seed, hash_str(image.bytes), 0x766572ull));
        std::uint32_t observed = sim_observe(img, params_, rng);
        const auto& questions =
            static_cast<int>(task.questions.size()) == img.k ? task.questions
                                                             : std::vector<std::string>{};
        return report_from_observation(observed, img.k, questions);
    }

private:
    SimParams params_;
};

class SimCritic final : public CriticIface {
public:
    explicit SimCritic(SimParams params) : params_(params) {}

    CriticDecision critique(const CriticContext& ctx) override {
        SimImage img = sim_image_from_ref(ctx.image);
        return sim_critic(img, ctx.report, ctx.prev_score, ctx.round, ctx.max_rounds, params_);
    }

private:
    SimParams params_;
};

inline BackendSet make_sim_backends(const SimParams& params) {
    params.validate();
    return BackendSet{std::make_shared<SimGenerator>(params), std::make_shared<SimEditor>(params),
                      std::make_shared<SimVerifier>(params), std::make_shared<SimCritic>(params)};
}

// Synthetic task with one question per binding.
inline TaskPrompt make_sim_task(const SimParams& params, const std::string& id = "sim") {
    TaskPrompt task;
    task.id = id;
    task.text = "synthetic compositional prompt with " + std::to_string(params.k) + " bindings";
    for (int i = 0; i < params.k; ++i)
        task.questions.push_back("Is binding " + std::to_string(i) + " rendered correctly?");
    task.category = "k=" + std::to_string(params.k);
    return task;
}

}  // namespace refinery
