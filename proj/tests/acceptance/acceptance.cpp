// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// The end-to-end part trains every model at desk scale (about 10 minutes on one core).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "tom/belief.hpp"
#include "tom/diagnostics.hpp"
#include "tom/planner.hpp"
#include "tom/study.hpp"
#include "tom/whitening.hpp"

using namespace tom;

namespace {

// Tolerances and budgets.
constexpr int kBeliefSteps = 10000;
constexpr double kNormalizationTol = 1e-9;
constexpr double kBeliefSeconds = 10.0;
constexpr int kPlannerGrids = 100;
constexpr double kPlannerSeconds = 10.0;
constexpr double kNumericsSeconds = 60.0;
constexpr int kWhiteningBatches = 50;
constexpr double kWhitenedMeanTol = 1e-9;
constexpr double kWhitenedCovTol = 1e-6;
constexpr double kOrthogonalityTol = 1e-8;
constexpr int kAlignmentSteps = 100;
constexpr double kWhiteningSeconds = 30.0;
constexpr int kMinIamSamples = 10000;
constexpr double kChanceFactor = 3.0;
constexpr int kMinSeparated = 7;
constexpr double kProxyMargin = 0.15;
constexpr double kNearZero = 0.05;
constexpr double kTransferTol = 0.02;
constexpr double kStudySeconds = 15.0 * 60.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string num(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

void progress(const std::string& msg, Clock::time_point t0) {
    std::printf("  [%6.1fs] %s\n", seconds_since(t0), msg.c_str());
    std::fflush(stdout);
}

// --- belief ---

Observation random_observation(int w, int h, int tick, std::mt19937_64& rng) {
    Observation o;
    o.visible = Grid<std::uint8_t>(w, h, kUnseen);
    o.tick = tick;
    std::uniform_int_distribution<int> type(0, kNumBlockTypes - 1);
    std::bernoulli_distribution seen(0.3);
    for (auto& c : o.visible.cells())
        if (seen(rng)) c = static_cast<std::uint8_t>(type(rng));
    o.pose = {{static_cast<int>(rng() % w), static_cast<int>(rng() % h)}, static_cast<Facing>(rng() % 4)};
    o.beep = static_cast<std::uint8_t>(rng() % 3);
    return o;
}

void belief_criterion() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    BeliefState b = init_belief(24, 24);
    double worst = 0.0;
    bool in_range = true;
    for (int t = 0; t < kBeliefSteps; ++t) {
        // alternate the composed update with bare decays
        if (t % 4 == 3) decay_in_place(b, kDefaultForgetfulness);
        else b = update(b, random_observation(24, 24, t % kDefaultMissionTicks, rng), kDefaultForgetfulness);
        worst = std::max(worst, max_normalization_error(b));
        for (double p : b.probs) in_range = in_range && p >= 0.0 && p <= 1.0;
    }
    const BeliefState u = init_belief(24, 24);
    BeliefState v = u;
    for (int i = 0; i < 1000; ++i) v = decay(v, 0.01);
    const bool fixed = v.probs == u.probs;
    const double secs = seconds_since(t0);
    report(worst <= kNormalizationTol && in_range && fixed && secs < kBeliefSeconds, "belief invariants",
           std::to_string(kBeliefSteps) + " steps, max normalization error " + num(worst) +
               (fixed ? ", uniform fixed point exact" : ", uniform fixed point broken") + ", " + num(secs, 3) + " s");
}

// --- planner ---

int dijkstra_cost(const OccupancyGrid& g, Pose start, Vec2i goal) {
    const int w = g.width(), h = g.height();
    std::vector<int> dist(static_cast<std::size_t>(w) * h * 4, -1);
    auto id = [&](Pose p) { return (p.pos.y * w + p.pos.x) * 4 + static_cast<int>(p.facing); };
    using Item = std::pair<int, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    dist[id(start)] = 0;
    open.push({0, id(start)});
    const bool blocked_goal = g.kind.at(goal) == CellKind::blocked;
    while (!open.empty()) {
        auto [d, s] = open.top();
        open.pop();
        if (d > dist[s]) continue;
        const Pose p{{(s / 4) % w, (s / 4) / w}, static_cast<Facing>(s % 4)};
        const Vec2i dv = facing_delta(p.facing);
        const Vec2i ahead{p.pos.x + dv.x, p.pos.y + dv.y};
        if (blocked_goal ? ahead == goal : p.pos == goal) return d;
        std::vector<std::pair<Pose, int>> next;
        if (g.kind.in_bounds(ahead) && g.kind.at(ahead) != CellKind::blocked)
            next.push_back({{ahead, p.facing}, g.kind.at(ahead) == CellKind::door ? 2 : 1});
        next.push_back({{p.pos, static_cast<Facing>((static_cast<int>(p.facing) + 1) % 4)}, 1});
        next.push_back({{p.pos, static_cast<Facing>((static_cast<int>(p.facing) + 3) % 4)}, 1});
        for (auto [q, c] : next) {
            const int qi = id(q);
            if (dist[qi] < 0 || d + c < dist[qi]) {
                dist[qi] = d + c;
                open.push({d + c, qi});
            }
        }
    }
    return -1;
}

Grid<BlockType> random_blocks(int w, int h, std::mt19937_64& rng) {
    Grid<BlockType> g(w, h, BlockType::air);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& c : g.cells()) {
        const double r = u(rng);
        if (r < 0.25) c = BlockType::wall;
        else if (r < 0.32) c = BlockType::door_closed;
        else if (r < 0.36) c = BlockType::victim_noncritical;
        else if (r < 0.40) c = BlockType::opening;
    }
    return g;
}

void planner_criterion() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(202);
    int mismatches = 0, reachable = 0;
    for (int trial = 0; trial < kPlannerGrids; ++trial) {
        const OccupancyGrid g = occupancy_from_blocks(random_blocks(16, 16, rng));
        Pose start{{static_cast<int>(rng() % 16), static_cast<int>(rng() % 16)}, static_cast<Facing>(rng() % 4)};
        while (g.kind.at(start.pos) == CellKind::blocked) start.pos = {static_cast<int>(rng() % 16), static_cast<int>(rng() % 16)};
        const Vec2i goal{static_cast<int>(rng() % 16), static_cast<int>(rng() % 16)};
        const Path p = astar(g, start, goal);
        const int oracle = dijkstra_cost(g, start, goal);
        mismatches += (p.empty() ? -1 : p.cost) != oracle;
        reachable += oracle >= 0;
    }
    const double secs = seconds_since(t0);
    report(mismatches == 0 && secs < kPlannerSeconds, "planner oracle",
           std::to_string(mismatches) + " mismatches on " + std::to_string(kPlannerGrids) + " grids (" +
               std::to_string(reachable) + " reachable goals), " + num(secs, 3) + " s");
}

// --- numerics ---

void numerics_criterion() {
    const auto t0 = Clock::now();
    auto checks = layer_gradient_checks();
    for (auto& c : model_gradient_checks()) checks.push_back(std::move(c));
    std::string failed;
    double worst_layer = 0.0, worst_model = 0.0;
    for (const auto& c : checks) {
        if (!c.passed()) failed += " " + c.name;
        double& w = c.tolerance == kLayerGradTolerance ? worst_layer : worst_model;
        w = std::max(w, c.report.max_rel_error);
    }
    const double secs = seconds_since(t0);
    report(failed.empty() && secs < kNumericsSeconds, "numerics",
           std::to_string(checks.size()) + " gradient checks, worst layer rel error " + num(worst_layer) +
               ", worst model rel error " + num(worst_model) + (failed.empty() ? "" : ", failed:" + failed) + ", " +
               num(secs, 3) + " s");
}

// --- whitening ---

Eigen::MatrixXd random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = n(rng);
    return m;
}

void whitening_criterion() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(303);
    double worst_mean = 0.0, worst_cov = 0.0;
    for (int b = 0; b < kWhiteningBatches; ++b) {
        const int d = 4 + static_cast<int>(rng() % 13), n = 4 * d + static_cast<int>(rng() % 200);
        const Eigen::MatrixXd mix = random_matrix(d, d, rng) + 2.0 * Eigen::MatrixXd::Identity(d, d);
        Eigen::MatrixXd x = random_matrix(n, d, rng) * mix;
        x.rowwise() += random_matrix(1, d, rng, 3.0).row(0);
        const Eigen::MatrixXd y = apply_whitening(fit_whitening(x), x);
        worst_mean = std::max(worst_mean, y.colwise().mean().cwiseAbs().maxCoeff());
        const Eigen::MatrixXd cov = batch_covariance(y) - Eigen::MatrixXd::Identity(d, d);
        worst_cov = std::max(worst_cov, cov.cwiseAbs().maxCoeff());
    }

    const int d = 16, k = 10;
    ConceptWhitening cw(d);
    cw.fit(random_matrix(200, d, rng));
    cw.Q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_matrix(d, d, rng)).householderQ();
    std::vector<Eigen::VectorXd> means;
    for (int j = 0; j < k; ++j) means.push_back(random_matrix(d, 1, rng).col(0));
    const AlignmentReport r = cw.align(means, kAlignmentSteps);
    bool monotone = true;
    for (std::size_t i = 1; i < r.objective.size(); ++i) monotone = monotone && r.objective[i] >= r.objective[i - 1];
    const double orth = cw.orthogonality_error();
    const double secs = seconds_since(t0);
    report(worst_mean < kWhitenedMeanTol && worst_cov < kWhitenedCovTol && orth < kOrthogonalityTol &&
               r.max_orthogonality_error < kOrthogonalityTol && monotone && secs < kWhiteningSeconds,
           "whitening",
           "max |mean| " + num(worst_mean) + ", max |cov - I| " + num(worst_cov) + " over " +
               std::to_string(kWhiteningBatches) + " batches; ||Q^T Q - I||_F " + num(orth) + " after " +
               std::to_string(r.accepted) + " accepted steps, objective " + num(r.objective.front()) + " -> " +
               num(r.objective.back()) + (monotone ? " non-decreasing" : " DECREASED") + ", " + num(secs, 3) + " s");
}

// --- end-to-end study ---

struct CwRun {
    TrainLog log;
    EvalResult eval;
    int separated = 0;
    int concepts = 0;
};

CwRun train_cw(const RunConfig& base, int set, const StudyData& data, const DmDataset& ds, Clock::time_point t0) {
    RunConfig cfg = base;
    cfg.mode = RunMode::cw;
    cfg.concept_set = set;
    IntentModel dm(dm_model_config(cfg, true));
    const auto concepts = build_concept_datasets(data.cache, data.trajectories, concept_set(set));
    CwRun run;
    run.concepts = static_cast<int>(concepts.size());
    run.log = train_dm_cw(dm, data.cache, ds, concepts, dm_train_options(cfg), cfg.align, [&](int e, double l) {
        progress("cw set " + std::to_string(set) + " epoch " + std::to_string(e) + " loss " + num(l), t0);
    });
    const auto sampled = sample_concept_entries(concepts, cfg.align.max_samples, dm_train_options(cfg).seed);
    run.separated = separated_concepts(concept_activation_means(dm, data.cache, sampled));
    run.eval = evaluate_intent_accuracy(dm, data.map, data.trajectories, data.split.test, cfg.eps, run.concepts,
                                        cfg.mission_ticks);
    progress("cw set " + std::to_string(set) + " accuracy " + num(run.eval.accuracy.accuracy), t0);
    return run;
}

void study_criteria() {
    const auto t0 = Clock::now();
    const RunConfig cfg;  // desk-scale defaults
    StudyData data = prepare_study(cfg, study_map(cfg), study_trajectories(cfg, study_map(cfg)));
    progress("simulated " + std::to_string(data.trajectories.size()) + " trajectories, cache " +
                 std::to_string(data.cache.size()) + " beliefs",
             t0);

    IntentModel iam(iam_model_config(cfg));
    const IamDataset iam_ds = build_iam_dataset(data.cache, cfg.m, cfg.dataset_seed);
    const int violations = count_action_violations(data.cache, iam_ds);
    const int samples = static_cast<int>(iam_ds.samples.size());
    report(violations == 0 && samples >= kMinIamSamples, "inverse action dataset construction",
           std::to_string(violations) + " violations over " + std::to_string(samples) + " samples");

    train_iam(iam, data.cache, iam_ds, iam_train_options(cfg),
              [&](int e, double l) { progress("iam epoch " + std::to_string(e) + " loss " + num(l), t0); });
    const DmDataset ds = build_dm_dataset(data.cache, data.trajectories, data.visits, iam, cfg.lambda);

    IntentModel dm(dm_model_config(cfg, false));
    train_dm(dm, data.cache, ds, dm_train_options(cfg),
             [&](int e, double l) { progress("dm epoch " + std::to_string(e) + " loss " + num(l), t0); });
    const AccuracyReport base =
        evaluate_intent_accuracy(dm, data.map, data.trajectories, data.split.test, cfg.eps, 0, cfg.mission_ticks).accuracy;
    const double ratio = base.chance > 0 ? base.accuracy / base.chance : 0.0;
    report(ratio >= kChanceFactor, "study (i) accuracy over chance",
           "accuracy " + num(base.accuracy) + ", chance " + num(base.chance) + ", ratio " + num(ratio, 3) + " over " +
               std::to_string(base.segments) + " segments (need >= " + num(kChanceFactor) + ")");

    {
        IntentModel tr(dm_model_config(cfg, true));
        tr.transfer_from(dm.to_checkpoint());
        fit_cw_statistics(tr, data.cache, ds.entries);
        const double acc =
            evaluate_intent_accuracy(tr, data.map, data.trajectories, data.split.test, cfg.eps, 0, cfg.mission_ticks)
                .accuracy.accuracy;
        report(std::abs(acc - base.accuracy) <= kTransferTol, "transfer at epoch 0",
               "source " + num(base.accuracy) + ", transferred " + num(acc) + ", |diff| " +
                   num(std::abs(acc - base.accuracy)) + " (need <= " + num(kTransferTol) + ")");
    }

    const CwRun set1 = train_cw(cfg, 1, data, ds, t0);
    report(set1.log.orthogonality_violations == 0 && set1.log.objective_monotone, "study (ii) orthogonality",
           std::to_string(set1.log.orthogonality_violations) + " violations over " +
               std::to_string(set1.log.orthogonality.size()) + " epoch boundaries, " +
               std::to_string(set1.log.alignments.size()) + " alignment rounds, objective " +
               (set1.log.objective_monotone ? "non-decreasing" : "DECREASED"));
    report(set1.separated >= kMinSeparated, "study (iii) concept separation",
           std::to_string(set1.separated) + " of " + std::to_string(set1.concepts) +
               " concepts peak on their own axis (need >= " + std::to_string(kMinSeparated) + ")");

    const auto records = activation_records(data.split.test, set1.eval.predictions);
    for (ClassifierKind kind : {ClassifierKind::decision_tree, ClassifierKind::linear_margin}) {
        const ProxyResult p = proxy_classifier(records, kind, derive_seed(cfg.training_seed, 20));
        report(p.accuracy - p.control_accuracy >= kProxyMargin, "proxy classifier " + classifier_name(kind),
               "accuracy " + num(p.accuracy) + ", permuted-label control " + num(p.control_accuracy) + ", majority " +
                   num(p.majority) + " on " + std::to_string(p.test) + " held-out records (need margin >= " +
                   num(kProxyMargin) + ")");
    }
    {
        const auto defs = concept_set(1);
        const int expiry = cfg.scenario.critical_expiry_ticks;
        const ActivationTable t = mean_activation_table(records, set1.concepts,
                                                        [&](const ActivationRecord& r) { return r.tick >= expiry; });
        const int col = static_cast<int>(IntentType::critical_victim);
        const int count = t.counts[static_cast<std::size_t>(col)];
        double worst = 0.0;
        std::string rows;
        for (int j = 0; j < set1.concepts; ++j) {
            const std::string& n = defs[static_cast<std::size_t>(j)].name;
            if (n != "timer_5_8min" && n != "timer_over_8min") continue;
            worst = std::max(worst, t.mean(j, col));
            rows += " " + n + "=" + num(t.mean(j, col));
        }
        report(count > 0 && !rows.empty() && worst < kNearZero, "post-expiry critical activations",
               std::to_string(count) + " critical-victim predictions at tick >= " + std::to_string(expiry) + ";" + rows +
                   " (need < " + num(kNearZero) + ")");
        // context only: the same rows without the tick filter
        const ActivationTable all = mean_activation_table(records, set1.concepts);
        std::string info;
        for (int j = 0; j < set1.concepts; ++j) {
            const std::string& n = defs[static_cast<std::size_t>(j)].name;
            if (n == "timer_5_8min" || n == "timer_over_8min") info += " " + n + "=" + num(all.mean(j, col));
        }
        progress("all ticks: " + std::to_string(all.counts[static_cast<std::size_t>(col)]) +
                     " critical-victim predictions;" + info,
                 t0);
    }

    const CwRun set3 = train_cw(cfg, 3, data, ds, t0);
    const double a1 = set1.eval.accuracy.accuracy, a3 = set3.eval.accuracy.accuracy;
    report(a3 <= a1, "study (iv) concept-set ablation",
           "set I accuracy " + num(a1) + ", set III accuracy " + num(a3) + " (need set III <= set I)");

    const double secs = seconds_since(t0);
    report(secs < kStudySeconds, "study runtime", num(secs, 4) + " s (need < " + num(kStudySeconds) + ")");
}

}  // namespace

int main() {
    belief_criterion();
    planner_criterion();
    numerics_criterion();
    whitening_criterion();
    study_criteria();
    std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
    return failures == 0 ? 0 : 1;
}
