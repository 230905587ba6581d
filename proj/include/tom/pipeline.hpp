#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tom/belief.hpp"
#include "tom/models.hpp"
#include "tom/planner.hpp"

namespace tom {

// --- trajectories ---

// One profile per knowledge condition: nearest_victim, critical_first, signal_aware.
std::vector<AgentProfile> default_profiles(double noise = 0.05);

// Trajectory i uses profiles[i % profiles.size()] and seed derive_seed(seed, i).
std::vector<Trajectory> simulate_trajectories(const Map& map, const std::vector<AgentProfile>& profiles,
                                              int count, std::uint64_t seed,
                                              int mission_ticks = kDefaultMissionTicks);

// Seeded partition of trajectory ids; the test share is round(n * test_fraction), at least 1
// when n >= 2.
struct Split {
    std::vector<int> train;
    std::vector<int> test;
};
Split split_trajectories(int count, double test_fraction, std::uint64_t seed);

// Calls `fn(tick, belief)` with the belief after integrating the observation of every tick.
void roll_beliefs(const Trajectory& trajectory, double eps, int mission_ticks,
                  const std::function<void(int, const BeliefState&)>& fn);

// --- locations of interest ---

enum class IntentType : std::uint8_t { noncritical_victim = 0, critical_victim, opening };
inline constexpr int kNumIntentTypes = 3;
std::string intent_type_name(IntentType t);
// Doors (either state) and openings pool into `opening`.
std::optional<IntentType> intent_type_of(BlockType t);

// A location-of-interest visit: standing on a door or opening cell, or triaging a live
// victim from the adjacent cell. Consecutive ticks at the same location form one visit.
struct Visit {
    int start = 0;
    int end = 0;  // last tick of the dwell, inclusive
    Vec2i cell;
    IntentType type = IntentType::opening;
    friend bool operator==(const Visit&, const Visit&) = default;
};

std::vector<Visit> find_visits(const Map& map, const Trajectory& trajectory);

// Index into `visits` of the next realized visit at `tick` (first visit whose dwell has not
// ended), or -1 past the last one.
int next_visit(const std::vector<Visit>& visits, int tick);

// Entity bookkeeping for matching predicted cells against visited locations: door/opening
// cells group into 4-connected passages; a victim also owns its 4 neighbours.
class LocationIndex {
  public:
    explicit LocationIndex(const Map& map);
    bool matches(Vec2i predicted, Vec2i target) const;
    // Number of distinct locations of interest with live victims taken from `world`.
    int count(const WorldState& world) const;
    int passages() const { return passages_; }

  private:
    const Map* map_;
    Grid<int> passage_;
    int passages_ = 0;
};

// --- belief cache ---

// Belief states of selected trajectories at every `stride`-th tick, shared by the
// datasets. Entry order is (trajectory, tick) ascending.
struct BeliefCache {
    double eps = kDefaultForgetfulness;
    int stride = 1;
    struct Entry {
        int trajectory = 0;
        int tick = 0;
    };
    std::vector<Entry> entries;
    std::vector<BeliefState> beliefs;

    std::size_t size() const { return entries.size(); }
};

BeliefCache build_belief_cache(const std::vector<Trajectory>& trajectories, const std::vector<int>& ids,
                               double eps, int stride, int mission_ticks = kDefaultMissionTicks);

nn::Tensor encode_entries(const BeliefCache& cache, const std::vector<int>& entries);

// --- inverse action dataset ---

struct IamSample {
    int entry = 0;  // index into the belief cache
    Vec2i intent;
    Action action = Action::none;
    friend bool operator==(const IamSample&, const IamSample&) = default;
};

struct IamDataset {
    int m = 0;
    std::uint64_t seed = 0;
    std::vector<IamSample> samples;
};

// m intents per cached belief drawn from the intent prior; a = action_model(b, z).
IamDataset build_iam_dataset(const BeliefCache& cache, int m, std::uint64_t seed);
// Samples whose stored action differs from action_model(b, z) recomputed now.
int count_action_violations(const BeliefCache& cache, const IamDataset& dataset);

// --- desire dataset ---

struct DmDataset {
    double lambda = 0.5;
    int cells = 0;
    std::vector<int> entries;
    std::vector<double> targets;  // entries.size() x cells
    std::vector<char> has_visit;  // whether the one-hot part was available

    std::size_t size() const { return entries.size(); }
    const double* target(std::size_t i) const { return targets.data() + i * static_cast<std::size_t>(cells); }
};

// target = lambda * onehot(next visit) + (1 - lambda) * exp(h(b_t, a_t)); the inverse
// action posterior alone when no visit follows.
DmDataset build_dm_dataset(const BeliefCache& cache, const std::vector<Trajectory>& trajectories,
                           const std::vector<std::vector<Visit>>& visits, IntentModel& iam, double lambda,
                           int batch = 64);

// --- concepts ---

enum class ConceptRule : std::uint8_t { timer, profile, field_of_view };

struct ConceptDefinition {
    std::string name;
    ConceptRule rule = ConceptRule::timer;
    int from_tick = 0;  // timer: [from_tick, to_tick)
    int to_tick = 0;
    Strategy strategy = Strategy::nearest_victim;  // profile
    std::vector<BlockType> blocks;                 // field of view: any of these visible

    bool applies(const Trajectory& trajectory, int tick) const;
};

// Set I: four timer intervals, three knowledge conditions, three field-of-view concepts.
// Set II drops the knowledge conditions; Set III also drops the timer.
std::vector<ConceptDefinition> concept_set(int set);
int concept_set_from_name(const std::string& name);  // "I", "II", "III" (or 1..3)

struct ConceptDataset {
    ConceptDefinition definition;
    std::vector<int> entries;
};

// Throws std::runtime_error naming the first concept without matching ticks.
std::vector<ConceptDataset> build_concept_datasets(const BeliefCache& cache,
                                                   const std::vector<Trajectory>& trajectories,
                                                   const std::vector<ConceptDefinition>& concepts);

// --- dataset containers ---

// "TDS1" | version u8 | kind u8 | X u16 | Y u16 | K u8 | channels (u16 length + names joined
// by ',') | eps f64 | stride u32 | seed u64 | trajectory ids (u32 count + u32 each) |
// body | FNV-1a-64 of all preceding bytes.
// IAM body: m u32, count u32, then (entry u32, x u16, y u16, action u8) per sample.
// Concept body: count u32, then per concept (name u16 + bytes, count u32, entries u32 each).
inline constexpr std::uint8_t kDatasetVersion = 1;

class DatasetFormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

std::string encode_iam_dataset(const BeliefCache& cache, const std::vector<int>& trajectory_ids,
                               const IamDataset& dataset);
IamDataset decode_iam_dataset(const std::string& bytes);
std::string encode_concept_datasets(const BeliefCache& cache, const std::vector<int>& trajectory_ids,
                                    const std::vector<ConceptDataset>& datasets);
// Names and entry lists only; definitions are looked up by the caller.
std::vector<std::pair<std::string, std::vector<int>>> decode_concept_datasets(const std::string& bytes);
// Content hash stored in the trailer.
std::uint64_t dataset_hash(const std::string& bytes);

// --- training ---

struct TrainOptions {
    int epochs = 4;
    int batch = 32;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
};

struct AlignOptions {
    // Alignment round after every `every`-th epoch except the last, so training always ends
    // with gradient steps on the current Q. Runs too short for that align once before the
    // final epoch.
    int every = 5;
    int iterations = 20;
    int max_samples = 256;     // per concept, drawn once with the training seed
    double orthogonality_tol = 1e-8;
};

struct TrainLog {
    std::vector<double> epoch_loss;         // mean training loss per epoch
    std::vector<double> orthogonality;      // CW: ||Q^T Q - I||_F at every epoch boundary
    std::vector<AlignmentReport> alignments;
    std::vector<int> alignment_epochs;      // epoch after which each round ran
    int orthogonality_violations = 0;
    bool objective_monotone = true;
};

// Progress callback: (epoch, mean loss).
using EpochHook = std::function<void(int, double)>;

TrainLog train_iam(IntentModel& model, const BeliefCache& cache, const IamDataset& dataset,
                   const TrainOptions& options, const EpochHook& hook = {});
TrainLog train_dm(IntentModel& model, const BeliefCache& cache, const DmDataset& dataset,
                  const TrainOptions& options, const EpochHook& hook = {});
TrainLog train_dm_cw(IntentModel& model, const BeliefCache& cache, const DmDataset& dataset,
                     const std::vector<ConceptDataset>& concepts, const TrainOptions& options,
                     const AlignOptions& align, const EpochHook& hook = {});

// Sets the CW running statistics from one pass over the given cache entries (transfer path).
void fit_cw_statistics(IntentModel& model, const BeliefCache& cache, const std::vector<int>& entries,
                       int batch = 64);

// Per-concept sample of cache entries used for alignment and separation checks.
std::vector<std::vector<int>> sample_concept_entries(const std::vector<ConceptDataset>& concepts,
                                                     int max_samples, std::uint64_t seed);

// Mean whitened latent psi over each concept's entries.
std::vector<Eigen::VectorXd> concept_means(IntentModel& model, const BeliefCache& cache,
                                           const std::vector<std::vector<int>>& entries, int batch = 64);

// Row j: mean activation vector (first k axes) over concept j's entries.
Eigen::MatrixXd concept_activation_means(IntentModel& model, const BeliefCache& cache,
                                         const std::vector<std::vector<int>>& entries, int batch = 64);

// Concepts whose mean activation is largest on their own axis.
int separated_concepts(const Eigen::MatrixXd& activation_means);

}  // namespace tom
