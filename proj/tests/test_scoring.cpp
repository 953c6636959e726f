#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "refinery/engine.hpp"
#include "refinery/oracle.hpp"
#include "refinery/scoring.hpp"

using namespace refinery;

namespace {

TaskPrompt corgi_task() {
    TaskPrompt t;
    t.id = "corgi";
    t.text =
        "In an abstract ink style image, a corgi stands near a large tree. Nearby, there are "
        "three tiny hills with a metallic texture.";
    t.questions = {"Does the image contain corgi?",
                   "Does the image contain hills?",
                   "Does the hill have a metallic texture?",
                   "Is the style of the image abstract?",
                   "Is the style of the image ink?",
                   "Is the hill tiny in size?",
                   "Is the number of hills exactly 3?"};
    return t;
}

struct ChatRecorder {
    std::vector<std::string> prompts;
    std::vector<std::string> responses;
    std::size_t next = 0;

    ChatFn fn() {
        return [this](const std::string&, const std::string& user,
                      const std::vector<ImageRef>&) {
            prompts.push_back(user);
            if (next < responses.size()) return responses[next++];
            return responses.empty() ? std::string() : responses.back();
        };
    }
};

}  // namespace

TEST_CASE("binary scoring parses per-line verdicts in question order") {
    ChatRecorder chat;
    chat.responses = {"1: 1\n2: 1\n3: 1\n4: 0\n5: 1\n6: 1\n7: 1"};
    ImageRef img{"", "text/plain", "img"};
    VerifierReport report = score_binary(img, corgi_task(), chat.fn());

    CHECK(report.score == Score::binary(6, 7));
    CHECK(format_score_3dp(report.score) == "0.857");
    REQUIRE(report.answers.size() == 7);
    CHECK(report.answers[3].question == "Is the style of the image abstract?");
    CHECK(report.answers[3].verdict == 0);
    for (std::size_t i = 0; i < 7; ++i)
        CHECK(report.answers[i].question == corgi_task().questions[i]);
    CHECK_FALSE(report.degraded);
    CHECK(chat.prompts.size() == 1);
    // The prompt enumerates every question.
    CHECK(chat.prompts[0].find("1. Does the image contain corgi?") != std::string::npos);
    CHECK(chat.prompts[0].find("7. Is the number of hills exactly 3?") != std::string::npos);
}

TEST_CASE("binary scoring retries once then degrades missing answers to 0") {
    ChatRecorder chat;
    chat.responses = {"1: 1\n2: 1", "1: 1\n2: 1"};  // question 3 never answered
    TaskPrompt t;
    t.id = "t";
    t.text = "p";
    t.questions = {"a?", "b?", "c?"};
    VerifierReport report = score_binary(ImageRef{"", "", "x"}, t, chat.fn());
    CHECK(chat.prompts.size() == 2);  // one retry
    CHECK(report.degraded);
    CHECK(report.answers[2].verdict == 0);
    CHECK(report.score == Score::binary(2, 3));
}

TEST_CASE("binary scoring guards") {
    ChatRecorder chat;
    chat.responses = {"1: 1"};
    TaskPrompt no_questions;
    no_questions.id = "t";
    no_questions.text = "p";
    CHECK_THROWS_AS(score_binary(ImageRef{}, no_questions, chat.fn()), ConfigError);
}

TEST_CASE("all-yes binary report is perfect") {
    ChatRecorder chat;
    chat.responses = {"1: 1\n2: 1\n3: 1\n4: 1\n5: 1\n6: 1\n7: 1"};
    VerifierReport report = score_binary(ImageRef{"", "", "x"}, corgi_task(), chat.fn());
    CHECK(report.score.perfect());
}

TEST_CASE("continuous scoring extracts and normalizes integers") {
    TaskPrompt t;
    t.id = "t";
    t.text = "p";
    t.continuous_rubric = "alignment";

    ChatRecorder plain;
    plain.responses = {"92"};
    CHECK(score_continuous(ImageRef{}, t, plain.fn()).score == Score::continuous(92));

    ChatRecorder decorated;
    decorated.responses = {"Score: 100/100"};
    VerifierReport r = score_continuous(ImageRef{}, t, decorated.fn());
    CHECK(r.score == Score{1, 1});
    CHECK(r.score.perfect());

    ChatRecorder vague;
    vague.responses = {"excellent", "truly excellent"};
    CHECK_THROWS_AS(score_continuous(ImageRef{}, t, vague.fn()), ProtocolError);
    CHECK(vague.prompts.size() == 2);  // retried once

    ChatRecorder out_of_range;
    out_of_range.responses = {"150"};
    VerifierReport clamped = score_continuous(ImageRef{}, t, out_of_range.fn());
    CHECK(clamped.score == Score{1, 1});
    CHECK(clamped.degraded);

    TaskPrompt no_rubric;
    no_rubric.id = "t";
    no_rubric.text = "p";
    ChatRecorder unused;
    CHECK_THROWS_AS(score_continuous(ImageRef{}, no_rubric, unused.fn()), ConfigError);
}

TEST_CASE("chat verifier dispatches on task shape") {
    ChatRecorder chat;
    chat.responses = {"1: 1\n2: 0"};
    ChatVerifier binary(chat.fn());
    TaskPrompt t;
    t.id = "t";
    t.text = "p";
    t.questions = {"a?", "b?"};
    CHECK(binary.verify(ImageRef{}, t).mode == ScoreMode::Binary);

    ChatRecorder cont;
    cont.responses = {"73"};
    ChatVerifier continuous(cont.fn());
    TaskPrompt rubric_task;
    rubric_task.id = "t";
    rubric_task.text = "p";
    rubric_task.continuous_rubric = "style fidelity";
    VerifierReport r = continuous.verify(ImageRef{}, rubric_task);
    CHECK(r.mode == ScoreMode::Continuous);
    CHECK(r.score == Score::continuous(73));
}

TEST_CASE("full solve rate counts exact perfection only") {
    std::vector<VerifierReport> reports(3);
    reports[0].score = Score{7, 7};
    reports[1].score = Score{6, 7};
    reports[2].score = Score{5, 5};
    CHECK(full_solve_rate(reports) == Score::fraction(2, 3));
    CHECK_THROWS_AS(full_solve_rate({}), ConfigError);

    // 0.9999... as a float would slip past a threshold; rationals do not.
    std::vector<VerifierReport> near(1);
    near[0].score = Score{999999, 1000000};
    CHECK(full_solve_rate(near) == Score::fraction(0, 1));
}

TEST_CASE("near-perfect environment solves almost every task") {
    SimParams params;
    params.k = 1;
    params.p0 = 0.99;
    const Budget budget{2, 2, 1};
    const double exact = oracle_solve_rate(params, budget);
    CHECK(exact >= 0.95);

    const int trials = 1000;
    std::vector<VerifierReport> final_reports;
    for (int t = 0; t < trials; ++t) {
        SimParams trial = params;
        trial.seed = mix64(31, t);
        BackendSet backends = make_sim_backends(trial);
        EngineConfig cfg;
        cfg.budget = budget;
        cfg.seed = mix64(32, t);
        cfg.workers = 1;
        RunJournal journal("mc");
        final_reports.push_back(
            *run_refinement(make_sim_task(trial), cfg, backends, journal).best.report);
    }
    const double rate = full_solve_rate(final_reports).value();
    const double sigma = std::sqrt(exact * (1.0 - exact) / trials);
    CHECK(rate >= 0.95);
    CHECK(std::abs(rate - exact) <= 3.0 * sigma);
}

TEST_CASE("category means aggregate per label") {
    auto singleton = category_means({{"Spatial", 0.8}});
    REQUIRE(singleton.size() == 1);
    CHECK(singleton[0].mean == Catch::Approx(0.8));
    CHECK(singleton[0].count == 1);

    // Two categories of equal size: overall mean equals mean of category means.
    auto rows = category_means({{"A", 0.2}, {"A", 0.4}, {"B", 0.8}, {"B", 1.0}});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].category == "A");  // sorted by label
    CHECK(rows[1].category == "B");
    const double overall = (0.2 + 0.4 + 0.8 + 1.0) / 4.0;
    CHECK((rows[0].mean + rows[1].mean) / 2.0 == Catch::Approx(overall));

    // A category absent from the input yields no row at all.
    for (const auto& row : rows) CHECK(row.category != "C");
}
