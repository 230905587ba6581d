#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tom/pipeline.hpp"

namespace tom {

// --- per-tick predictions ---

struct TickPrediction {
    int tick = 0;
    Vec2i cell;                   // argmax of the intent grid (first cell on ties)
    std::optional<IntentType> type;  // block type of the collapsed belief at `cell`
    Eigen::VectorXd activations;  // CW models: q_j^T psi for the concept axes, else empty
};

// Runs the desire model over every tick of a trajectory. `concepts` > 0 requests
// activations on the first `concepts` axes (CW models only).
std::vector<TickPrediction> predict_trajectory(IntentModel& model, const Trajectory& trajectory, double eps,
                                               int concepts = 0, int batch = 64,
                                               int mission_ticks = kDefaultMissionTicks);

// --- mode-aggregated accuracy ---

struct SegmentedPrediction {
    int trajectory = 0;
    int first_tick = 0;  // segment covers [first_tick, last_tick]
    int last_tick = 0;
    Vec2i mode;
    Visit target;
    int locations = 0;  // locations of interest available when the segment ends
    bool correct = false;
};

// Segment i runs from the tick after visit i-1's dwell (tick 0 for the first visit) through
// the end of visit i's dwell, so segments partition [0, end of last visit]. The mode of the
// per-tick cells is compared with visit i; ties go to the cell that occurs first.
std::vector<SegmentedPrediction> segment_predictions(int trajectory_id, const std::vector<Visit>& visits,
                                                     const std::vector<Vec2i>& cells, const LocationIndex& index,
                                                     const std::vector<WorldState>& states);

Vec2i segment_mode(const std::vector<Vec2i>& cells, int from, int to);

struct AccuracyReport {
    double accuracy = 0.0;
    double chance = 0.0;  // mean over segments of 1 / locations
    int segments = 0;
    std::vector<int> skipped;  // trajectories without segments
    std::vector<SegmentedPrediction> details;
};

AccuracyReport summarize_accuracy(const std::vector<SegmentedPrediction>& segments, std::vector<int> skipped = {});

// Full evaluation of a desire model on the given trajectories.
struct EvalResult {
    AccuracyReport accuracy;
    std::vector<std::vector<TickPrediction>> predictions;  // per evaluated trajectory
};
EvalResult evaluate_intent_accuracy(IntentModel& model, const Map& map, const std::vector<Trajectory>& trajectories,
                                    const std::vector<int>& ids, double eps, int concepts = 0,
                                    int mission_ticks = kDefaultMissionTicks);

// --- activations ---

struct ActivationRecord {
    int trajectory = 0;
    int tick = 0;
    Eigen::VectorXd activations;
    IntentType type = IntentType::opening;
};

// Records for every prediction whose cell is a believed location of interest.
std::vector<ActivationRecord> activation_records(const std::vector<int>& ids,
                                                 const std::vector<std::vector<TickPrediction>>& predictions);

// ReLU then L1 normalization; an all-non-positive vector maps to zeros.
Eigen::VectorXd normalize_activation(const Eigen::VectorXd& a);

struct ActivationTable {
    Eigen::MatrixXd mean;  // k x 3, column = intent type
    std::array<int, kNumIntentTypes> counts{};
};

ActivationTable mean_activation_table(const std::vector<ActivationRecord>& records, int k,
                                      const std::function<bool(const ActivationRecord&)>& filter = {});

// --- proxy classifiers ---

// CART with Gini impurity and axis-aligned threshold splits.
class DecisionTree {
  public:
    void fit(const Eigen::MatrixXd& X, const std::vector<int>& y, int classes, int max_depth = 6,
             int min_samples_split = 2);
    int predict(const Eigen::VectorXd& x) const;
    int depth() const;

  private:
    struct Node {
        int feature = -1;
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        int label = 0;
    };
    int build(const Eigen::MatrixXd& X, const std::vector<int>& y, std::vector<int>& idx, int depth);
    std::vector<Node> nodes_;
    int classes_ = 0;
    int max_depth_ = 6;
    int min_split_ = 2;
};

// One-vs-rest linear classifier minimizing the L2-regularized hinge loss by subgradient
// descent on standardized features.
class LinearMargin {
  public:
    void fit(const Eigen::MatrixXd& X, const std::vector<int>& y, int classes, int epochs = 300,
             double lambda = 1e-3);
    int predict(const Eigen::VectorXd& x) const;

  private:
    Eigen::MatrixXd W_;  // classes x d
    Eigen::VectorXd b_;
    Eigen::VectorXd mean_, scale_;
};

enum class ClassifierKind { decision_tree, linear_margin };
std::string classifier_name(ClassifierKind k);

struct ProxyResult {
    double accuracy = 0.0;
    double control_accuracy = 0.0;  // same pipeline on permuted labels
    double majority = 0.0;          // majority-class share of the held-out split
    int train = 0;
    int test = 0;
};

// 80/20 seeded split of the records; throws std::invalid_argument with fewer than two
// classes present.
ProxyResult proxy_classifier(const std::vector<ActivationRecord>& records, ClassifierKind kind, std::uint64_t seed);

// --- reports ---

std::string segments_csv(const std::vector<SegmentedPrediction>& segments);
std::string activations_csv(const std::vector<ActivationRecord>& records, const std::vector<std::string>& concept_names);

}  // namespace tom
