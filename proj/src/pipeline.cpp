#include "tom/pipeline.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tom/byte_io.hpp"
#include "tom/nn/ops.hpp"

namespace tom {

using nn::Tensor;

namespace {

// Fisher-Yates with raw engine draws so orderings do not depend on the standard library.
void shuffle_in_place(std::vector<int>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

std::vector<int> iota_vec(std::size_t n) {
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

}  // namespace

std::vector<AgentProfile> default_profiles(double noise) {
    return {{1, Strategy::nearest_victim, noise}, {2, Strategy::critical_first, noise}, {3, Strategy::signal_aware, noise}};
}

std::vector<Trajectory> simulate_trajectories(const Map& map, const std::vector<AgentProfile>& profiles, int count,
                                              std::uint64_t seed, int mission_ticks) {
    if (profiles.empty()) throw ConfigError("at least one agent profile is required");
    if (count < 1) throw ConfigError("trajectory count must be positive");
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        out.push_back(run_scripted_agent(map, profiles[static_cast<std::size_t>(i) % profiles.size()],
                                         derive_seed(seed, static_cast<std::uint64_t>(i)), mission_ticks));
    return out;
}

Split split_trajectories(int count, double test_fraction, std::uint64_t seed) {
    if (count < 1) throw ConfigError("cannot split an empty trajectory set");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in [0, 1)");
    int n_test = static_cast<int>(std::lround(count * test_fraction));
    if (count >= 2 && test_fraction > 0.0) n_test = std::clamp(n_test, 1, count - 1);
    std::vector<int> ids = iota_vec(static_cast<std::size_t>(count));
    std::mt19937_64 rng(seed);
    shuffle_in_place(ids, rng);
    Split s;
    s.test.assign(ids.begin(), ids.begin() + n_test);
    s.train.assign(ids.begin() + n_test, ids.end());
    std::sort(s.test.begin(), s.test.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

void roll_beliefs(const Trajectory& trajectory, double eps, int mission_ticks,
                  const std::function<void(int, const BeliefState&)>& fn) {
    BeliefState b = init_belief(trajectory.width, trajectory.height);
    for (int t = 0; t < trajectory.ticks(); ++t) {
        integrate_in_place(b, trajectory.steps[static_cast<std::size_t>(t)].observation, mission_ticks);
        decay_in_place(b, eps);
        fn(t, b);
    }
}

std::string intent_type_name(IntentType t) {
    switch (t) {
        case IntentType::noncritical_victim: return "noncritical_victim";
        case IntentType::critical_victim: return "critical_victim";
        case IntentType::opening: return "opening";
    }
    return "?";
}

std::optional<IntentType> intent_type_of(BlockType t) {
    if (t == BlockType::victim_noncritical) return IntentType::noncritical_victim;
    if (t == BlockType::victim_critical) return IntentType::critical_victim;
    if (is_door(t) || t == BlockType::opening) return IntentType::opening;
    return std::nullopt;
}

std::vector<Visit> find_visits(const Map& map, const Trajectory& trajectory) {
    const std::vector<WorldState> states = replay_states(map, trajectory);
    std::vector<Visit> visits;
    for (int t = 0; t < trajectory.ticks(); ++t) {
        const TrajectoryStep& s = trajectory.steps[static_cast<std::size_t>(t)];
        const Pose& pose = s.observation.pose;
        std::optional<Visit> here;
        const Vec2i ahead = pose.ahead();
        if (s.action == Action::triage && map.grid.in_bounds(ahead) && map.victim_at.at(ahead) >= 0) {
            const int vi = map.victim_at.at(ahead);
            if (states[static_cast<std::size_t>(t)].victims[static_cast<std::size_t>(vi)] ==
                WorldState::VictimStatus::alive)
                here = Visit{t, t, ahead,
                             map.victims[static_cast<std::size_t>(vi)].critical ? IntentType::critical_victim
                                                                                : IntentType::noncritical_victim};
        }
        if (!here) {
            const BlockType b = map.grid.at(pose.pos);
            if (is_door(b) || b == BlockType::opening) here = Visit{t, t, pose.pos, IntentType::opening};
        }
        if (!here) continue;
        if (!visits.empty() && visits.back().cell == here->cell && visits.back().end == t - 1)
            visits.back().end = t;
        else
            visits.push_back(*here);
    }
    return visits;
}

int next_visit(const std::vector<Visit>& visits, int tick) {
    auto it = std::lower_bound(visits.begin(), visits.end(), tick, [](const Visit& v, int t) { return v.end < t; });
    return it == visits.end() ? -1 : static_cast<int>(it - visits.begin());
}

LocationIndex::LocationIndex(const Map& map) : map_(&map), passage_(map.width(), map.height(), -1) {
    auto is_passage = [&](Vec2i p) {
        const BlockType b = map.grid.at(p);
        return is_door(b) || b == BlockType::opening;
    };
    for (int y = 0; y < map.height(); ++y)
        for (int x = 0; x < map.width(); ++x) {
            if (passage_.at(x, y) >= 0 || !is_passage({x, y})) continue;
            std::vector<Vec2i> stack{{x, y}};
            passage_.at(x, y) = passages_;
            while (!stack.empty()) {
                const Vec2i p = stack.back();
                stack.pop_back();
                for (Vec2i d : {Vec2i{1, 0}, Vec2i{-1, 0}, Vec2i{0, 1}, Vec2i{0, -1}}) {
                    const Vec2i q{p.x + d.x, p.y + d.y};
                    if (!map.grid.in_bounds(q) || passage_.at(q) >= 0 || !is_passage(q)) continue;
                    passage_.at(q) = passages_;
                    stack.push_back(q);
                }
            }
            ++passages_;
        }
}

bool LocationIndex::matches(Vec2i predicted, Vec2i target) const {
    if (predicted == target) return true;
    if (!map_->grid.in_bounds(predicted) || !map_->grid.in_bounds(target)) return false;
    const int pt = passage_.at(target);
    if (pt >= 0) return passage_.at(predicted) == pt;
    if (map_->victim_at.at(target) >= 0) return manhattan(predicted, target) == 1;
    return false;
}

int LocationIndex::count(const WorldState& world) const {
    int alive = 0;
    for (auto s : world.victims) alive += s == WorldState::VictimStatus::alive;
    return alive + passages_;
}

BeliefCache build_belief_cache(const std::vector<Trajectory>& trajectories, const std::vector<int>& ids, double eps,
                               int stride, int mission_ticks) {
    if (ids.empty()) throw ConfigError("belief cache needs at least one trajectory");
    if (stride < 1) throw ConfigError("tick stride must be >= 1");
    BeliefCache cache;
    cache.eps = eps;
    cache.stride = stride;
    for (int id : ids) {
        const Trajectory& tr = trajectories.at(static_cast<std::size_t>(id));
        roll_beliefs(tr, eps, mission_ticks, [&](int t, const BeliefState& b) {
            if (t % stride != 0) return;
            cache.entries.push_back({id, t});
            cache.beliefs.push_back(b);
        });
    }
    return cache;
}

Tensor encode_entries(const BeliefCache& cache, const std::vector<int>& entries) {
    std::vector<const BeliefState*> ptrs;
    ptrs.reserve(entries.size());
    for (int e : entries) ptrs.push_back(&cache.beliefs.at(static_cast<std::size_t>(e)));
    return encode_beliefs(ptrs);
}

IamDataset build_iam_dataset(const BeliefCache& cache, int m, std::uint64_t seed) {
    if (m < 1) throw ConfigError("m must be >= 1");
    if (cache.size() == 0) throw ConfigError("empty belief cache");
    IamDataset ds;
    ds.m = m;
    ds.seed = seed;
    ds.samples.reserve(cache.size() * static_cast<std::size_t>(m));
    std::mt19937_64 rng(seed);
    for (std::size_t e = 0; e < cache.size(); ++e) {
        const BeliefState& b = cache.beliefs[e];
        const IntentPrior prior = intent_prior(b);
        for (int i = 0; i < m; ++i) {
            const Vec2i z = sample_intent(prior, rng);
            ds.samples.push_back({static_cast<int>(e), z, action_model(b, z)});
        }
    }
    return ds;
}

int count_action_violations(const BeliefCache& cache, const IamDataset& dataset) {
    int bad = 0;
    for (const IamSample& s : dataset.samples)
        bad += action_model(cache.beliefs.at(static_cast<std::size_t>(s.entry)), s.intent) != s.action;
    return bad;
}

DmDataset build_dm_dataset(const BeliefCache& cache, const std::vector<Trajectory>& trajectories,
                           const std::vector<std::vector<Visit>>& visits, IntentModel& iam, double lambda, int batch) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (cache.size() == 0) throw ConfigError("empty belief cache");
    if (iam.config().kind != ModelKind::inverse_action) throw std::invalid_argument("build_dm_dataset needs an inverse action model");
    const int X = iam.config().width, Y = iam.config().height;
    DmDataset ds;
    ds.lambda = lambda;
    ds.cells = X * Y;
    ds.entries = iota_vec(cache.size());
    ds.targets.assign(cache.size() * static_cast<std::size_t>(ds.cells), 0.0);
    ds.has_visit.assign(cache.size(), 0);
    for (std::size_t lo = 0; lo < cache.size(); lo += static_cast<std::size_t>(batch)) {
        const std::size_t hi = std::min(cache.size(), lo + static_cast<std::size_t>(batch));
        std::vector<int> idx(ds.entries.begin() + static_cast<long>(lo), ds.entries.begin() + static_cast<long>(hi));
        std::vector<Action> actions;
        for (int e : idx) {
            const auto& en = cache.entries[static_cast<std::size_t>(e)];
            actions.push_back(trajectories.at(static_cast<std::size_t>(en.trajectory)).steps.at(static_cast<std::size_t>(en.tick)).action);
        }
        const Tensor a = encode_actions(actions);
        const Tensor logp = iam.predict(encode_entries(cache, idx), &a);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const std::size_t e = static_cast<std::size_t>(idx[i]);
            double* t = ds.targets.data() + e * static_cast<std::size_t>(ds.cells);
            const double* lp = logp.data() + i * static_cast<std::size_t>(ds.cells);
            const auto& en = cache.entries[e];
            const auto& vs = visits.at(static_cast<std::size_t>(en.trajectory));
            const int v = next_visit(vs, en.tick);
            const double w = v >= 0 ? 1.0 - lambda : 1.0;
            for (int c = 0; c < ds.cells; ++c) t[c] = w * std::exp(lp[c]);
            if (v >= 0) {
                const Vec2i cell = vs[static_cast<std::size_t>(v)].cell;
                t[cell.y * X + cell.x] += lambda;
                ds.has_visit[e] = 1;
            }
        }
    }
    return ds;
}

bool ConceptDefinition::applies(const Trajectory& trajectory, int tick) const {
    switch (rule) {
        case ConceptRule::timer: return tick >= from_tick && tick < to_tick;
        case ConceptRule::profile: return trajectory.profile.strategy == strategy;
        case ConceptRule::field_of_view: {
            const auto& vis = trajectory.steps.at(static_cast<std::size_t>(tick)).observation.visible;
            for (std::uint8_t c : vis.cells()) {
                if (c == kUnseen) continue;
                if (std::find(blocks.begin(), blocks.end(), static_cast<BlockType>(c)) != blocks.end()) return true;
            }
            return false;
        }
    }
    return false;
}

std::vector<ConceptDefinition> concept_set(int set) {
    if (set < 1 || set > 3) throw ConfigError("concept set must be I, II or III");
    const int m = kTicksPerMinute;
    auto timer = [](std::string n, int a, int b) {
        ConceptDefinition c;
        c.name = std::move(n);
        c.rule = ConceptRule::timer;
        c.from_tick = a;
        c.to_tick = b;
        return c;
    };
    auto profile = [](std::string n, Strategy s) {
        ConceptDefinition c;
        c.name = std::move(n);
        c.rule = ConceptRule::profile;
        c.strategy = s;
        return c;
    };
    auto fov = [](std::string n, std::vector<BlockType> b) {
        ConceptDefinition c;
        c.name = std::move(n);
        c.rule = ConceptRule::field_of_view;
        c.blocks = std::move(b);
        return c;
    };
    std::vector<ConceptDefinition> out;
    if (set <= 2) {
        out.push_back(timer("timer_0_3min", 0, 3 * m));
        out.push_back(timer("timer_3_5min", 3 * m, 5 * m));
        out.push_back(timer("timer_5_8min", 5 * m, 8 * m));
        out.push_back(timer("timer_over_8min", 8 * m, INT_MAX));
    }
    if (set == 1) {
        out.push_back(profile("kc1_no_triage_no_signal", Strategy::nearest_victim));
        out.push_back(profile("kc2_triage_no_signal", Strategy::critical_first));
        out.push_back(profile("kc3_triage_signal", Strategy::signal_aware));
    }
    out.push_back(fov("fov_door_opening", {BlockType::door_closed, BlockType::door_open, BlockType::opening}));
    out.push_back(fov("fov_noncritical_victim", {BlockType::victim_noncritical}));
    out.push_back(fov("fov_critical_victim", {BlockType::victim_critical}));
    return out;
}

int concept_set_from_name(const std::string& name) {
    if (name == "I" || name == "1") return 1;
    if (name == "II" || name == "2") return 2;
    if (name == "III" || name == "3") return 3;
    throw ConfigError("unknown concept set '" + name + "' (expected I, II or III)");
}

std::vector<ConceptDataset> build_concept_datasets(const BeliefCache& cache, const std::vector<Trajectory>& trajectories,
                                                   const std::vector<ConceptDefinition>& concepts) {
    std::vector<ConceptDataset> out;
    for (const auto& c : concepts) out.push_back({c, {}});
    for (std::size_t e = 0; e < cache.size(); ++e) {
        const auto& en = cache.entries[e];
        const Trajectory& tr = trajectories.at(static_cast<std::size_t>(en.trajectory));
        for (auto& d : out)
            if (d.definition.applies(tr, en.tick)) d.entries.push_back(static_cast<int>(e));
    }
    for (const auto& d : out)
        if (d.entries.empty()) throw std::runtime_error("concept " + d.definition.name + " has no matching ticks");
    return out;
}

// --- containers ---

namespace {

enum class DatasetKind : std::uint8_t { iam = 1, concepts = 2 };

std::string channel_list(int K) {
    static const char* names[] = {"air", "wall", "door_closed", "door_open", "opening", "lever",
                                  "victim_noncritical", "victim_critical"};
    std::string s;
    for (int k = 0; k < K; ++k) s += (k < 8 ? std::string(names[k]) : "type" + std::to_string(k)) + ",";
    return s + "agent,facing_dx,facing_dy,timer,beep";
}

void write_header(ByteWriter& w, DatasetKind kind, const BeliefCache& cache, const std::vector<int>& ids,
                  std::uint64_t seed) {
    w.put_bytes("TDS1", 4);
    w.put<std::uint8_t>(kDatasetVersion);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(kind));
    const BeliefState* b = cache.beliefs.empty() ? nullptr : &cache.beliefs.front();
    const int K = b ? b->num_types : kNumBlockTypes;
    w.put<std::uint16_t>(static_cast<std::uint16_t>(b ? b->width : 0));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(b ? b->height : 0));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(K));
    w.put_string16(channel_list(K));
    w.put_f64(cache.eps);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cache.stride));
    w.put<std::uint64_t>(seed);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ids.size()));
    for (int id : ids) w.put<std::uint32_t>(static_cast<std::uint32_t>(id));
}

std::string finish(ByteWriter& w) {
    Fnv1a h;
    h.update(w.buffer());
    w.put<std::uint64_t>(h.digest());
    return std::move(w.buffer());
}

// Verifies magic, version, kind and checksum, then skips the header.
template <class Body>
auto read_container(const std::string& bytes, DatasetKind kind, Body body) {
    if (bytes.size() < 4 + 8 || bytes.compare(0, 4, "TDS1") != 0) throw DatasetFormatError("not a dataset container");
    const std::size_t limit = bytes.size() - 8;
    Fnv1a h;
    h.update(bytes.data(), limit);
    if (h.digest() != read_u64_le(bytes, limit)) throw DatasetFormatError("dataset checksum mismatch");
    try {
        ByteReader r(bytes, limit);
        char magic[4];
        r.get_bytes(magic, 4);
        if (r.get<std::uint8_t>() != kDatasetVersion) throw DatasetFormatError("unsupported dataset version");
        if (r.get<std::uint8_t>() != static_cast<std::uint8_t>(kind)) throw DatasetFormatError("unexpected dataset kind");
        r.get<std::uint16_t>();
        r.get<std::uint16_t>();
        r.get<std::uint8_t>();
        r.get_string16();
        r.get_f64();
        r.get<std::uint32_t>();
        const auto seed = r.get<std::uint64_t>();
        const auto n = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) r.get<std::uint32_t>();
        auto out = body(r, seed);
        if (r.remaining() != 0) throw DatasetFormatError("trailing bytes in dataset");
        return out;
    } catch (const ShortRead&) {
        throw DatasetFormatError("dataset is truncated");
    }
}

}  // namespace

std::string encode_iam_dataset(const BeliefCache& cache, const std::vector<int>& trajectory_ids,
                               const IamDataset& dataset) {
    ByteWriter w;
    write_header(w, DatasetKind::iam, cache, trajectory_ids, dataset.seed);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(dataset.m));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(dataset.samples.size()));
    for (const IamSample& s : dataset.samples) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.entry));
        w.put<std::uint16_t>(static_cast<std::uint16_t>(s.intent.x));
        w.put<std::uint16_t>(static_cast<std::uint16_t>(s.intent.y));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(s.action));
    }
    return finish(w);
}

IamDataset decode_iam_dataset(const std::string& bytes) {
    return read_container(bytes, DatasetKind::iam, [](ByteReader& r, std::uint64_t seed) {
        IamDataset ds;
        ds.seed = seed;
        ds.m = static_cast<int>(r.get<std::uint32_t>());
        const auto n = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) {
            IamSample s;
            s.entry = static_cast<int>(r.get<std::uint32_t>());
            s.intent.x = r.get<std::uint16_t>();
            s.intent.y = r.get<std::uint16_t>();
            const auto a = r.get<std::uint8_t>();
            if (a >= kNumActions) throw DatasetFormatError("invalid action code");
            s.action = static_cast<Action>(a);
            ds.samples.push_back(s);
        }
        return ds;
    });
}

std::string encode_concept_datasets(const BeliefCache& cache, const std::vector<int>& trajectory_ids,
                                    const std::vector<ConceptDataset>& datasets) {
    ByteWriter w;
    write_header(w, DatasetKind::concepts, cache, trajectory_ids, 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(datasets.size()));
    for (const auto& d : datasets) {
        w.put_string16(d.definition.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(d.entries.size()));
        for (int e : d.entries) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
    }
    return finish(w);
}

std::vector<std::pair<std::string, std::vector<int>>> decode_concept_datasets(const std::string& bytes) {
    return read_container(bytes, DatasetKind::concepts, [](ByteReader& r, std::uint64_t) {
        std::vector<std::pair<std::string, std::vector<int>>> out;
        const auto n = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) {
            std::string name = r.get_string16();
            const auto m = r.get<std::uint32_t>();
            if (m > r.remaining() / 4) throw DatasetFormatError("dataset is truncated");
            std::vector<int> entries(m);
            for (auto& e : entries) e = static_cast<int>(r.get<std::uint32_t>());
            out.emplace_back(std::move(name), std::move(entries));
        }
        return out;
    });
}

std::uint64_t dataset_hash(const std::string& bytes) {
    if (bytes.size() < 8) throw DatasetFormatError("dataset is truncated");
    return read_u64_le(bytes, bytes.size() - 8);
}

// --- training ---

namespace {

// Contiguous batches over a shuffled order; a trailing single sample joins the previous
// batch because batch statistics need at least two samples.
std::vector<std::vector<int>> make_batches(std::size_t n, int batch, std::mt19937_64& rng) {
    std::vector<int> order = iota_vec(n);
    shuffle_in_place(order, rng);
    std::vector<std::vector<int>> out;
    for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(batch)) {
        const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(batch));
        if (hi - lo == 1 && !out.empty())
            out.back().push_back(order[lo]);
        else
            out.emplace_back(order.begin() + static_cast<long>(lo), order.begin() + static_cast<long>(hi));
    }
    return out;
}

void check_options(const TrainOptions& o, std::size_t n) {
    if (n < 2) throw ConfigError("training needs at least two samples");
    if (o.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (o.batch < 2) throw ConfigError("batch size must be >= 2");
}

using BatchLoss = std::function<nn::Var(nn::Tape&, const std::vector<int>&)>;

double run_epoch(IntentModel& model, std::size_t n, const TrainOptions& o, int epoch, nn::Sgd& opt,
                 const BatchLoss& loss) {
    std::mt19937_64 rng(derive_seed(o.seed, static_cast<std::uint64_t>(epoch)));
    const auto batches = make_batches(n, o.batch, rng);
    double total = 0.0;
    std::size_t count = 0;
    const auto params = model.parameters();
    for (std::size_t b = 0; b < batches.size(); ++b) {
        nn::zero_grad(params);
        nn::Tape tape;
        nn::Var l = loss(tape, batches[b]);
        const double v = l.value()[0];
        if (!std::isfinite(v))
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(b));
        tape.backward(l);
        opt.step(params);
        total += v * static_cast<double>(batches[b].size());
        count += batches[b].size();
    }
    return total / static_cast<double>(count);
}

Tensor one_hot_targets(const std::vector<Vec2i>& cells, int X, int Y) {
    Tensor t({static_cast<int>(cells.size()), 1, Y, X});
    for (std::size_t i = 0; i < cells.size(); ++i)
        t[i * static_cast<std::size_t>(X * Y) + static_cast<std::size_t>(cells[i].y * X + cells[i].x)] = 1.0;
    return t;
}

BatchLoss dm_loss(IntentModel& model, const BeliefCache& cache, const DmDataset& ds) {
    return [&model, &cache, &ds](nn::Tape& tape, const std::vector<int>& idx) {
        const int X = model.config().width, Y = model.config().height;
        std::vector<int> entries;
        Tensor target({static_cast<int>(idx.size()), 1, Y, X});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            entries.push_back(ds.entries[static_cast<std::size_t>(idx[i])]);
            std::copy_n(ds.target(static_cast<std::size_t>(idx[i])), ds.cells, target.data() + i * static_cast<std::size_t>(ds.cells));
        }
        auto out = model.forward(tape, tape.constant(encode_entries(cache, entries)), std::nullopt, true);
        return nll_loss(out.log_probs, target);
    };
}

void check_dm(const IntentModel& model, const DmDataset& ds) {
    if (model.config().kind != ModelKind::desire) throw std::invalid_argument("expected a desire model");
    if (ds.cells != model.config().width * model.config().height)
        throw ConfigError("desire dataset grid does not match the model");
}

}  // namespace

TrainLog train_iam(IntentModel& model, const BeliefCache& cache, const IamDataset& dataset,
                   const TrainOptions& options, const EpochHook& hook) {
    if (model.config().kind != ModelKind::inverse_action) throw std::invalid_argument("expected an inverse action model");
    check_options(options, dataset.samples.size());
    nn::Sgd opt(options.lr, options.momentum, options.weight_decay);
    const int X = model.config().width, Y = model.config().height;
    const BatchLoss loss = [&](nn::Tape& tape, const std::vector<int>& idx) {
        std::vector<int> entries;
        std::vector<Action> actions;
        std::vector<Vec2i> cells;
        for (int i : idx) {
            const IamSample& s = dataset.samples[static_cast<std::size_t>(i)];
            entries.push_back(s.entry);
            actions.push_back(s.action);
            cells.push_back(s.intent);
        }
        auto out = model.forward(tape, tape.constant(encode_entries(cache, entries)), tape.constant(encode_actions(actions)), true);
        return nll_loss(out.log_probs, one_hot_targets(cells, X, Y));
    };
    TrainLog log;
    for (int e = 0; e < options.epochs; ++e) {
        log.epoch_loss.push_back(run_epoch(model, dataset.samples.size(), options, e, opt, loss));
        if (hook) hook(e + 1, log.epoch_loss.back());
    }
    return log;
}

TrainLog train_dm(IntentModel& model, const BeliefCache& cache, const DmDataset& dataset,
                  const TrainOptions& options, const EpochHook& hook) {
    check_dm(model, dataset);
    check_options(options, dataset.size());
    nn::Sgd opt(options.lr, options.momentum, options.weight_decay);
    const BatchLoss loss = dm_loss(model, cache, dataset);
    TrainLog log;
    for (int e = 0; e < options.epochs; ++e) {
        log.epoch_loss.push_back(run_epoch(model, dataset.size(), options, e, opt, loss));
        if (hook) hook(e + 1, log.epoch_loss.back());
    }
    return log;
}

TrainLog train_dm_cw(IntentModel& model, const BeliefCache& cache, const DmDataset& dataset,
                     const std::vector<ConceptDataset>& concepts, const TrainOptions& options,
                     const AlignOptions& align, const EpochHook& hook) {
    check_dm(model, dataset);
    check_options(options, dataset.size());
    ConceptWhitening* cw = model.concept_whitening();
    if (!cw) throw std::invalid_argument("train_dm_cw needs a concept-whitening model");
    if (concepts.empty() || static_cast<int>(concepts.size()) > cw->dim())
        throw ConfigError("concept count must lie in [1, latent dimension " + std::to_string(cw->dim()) + "]");
    if (align.every < 1 || align.iterations < 0 || align.max_samples < 1) throw ConfigError("invalid alignment options");
    const auto sampled = sample_concept_entries(concepts, align.max_samples, options.seed);

    nn::Sgd opt(options.lr, options.momentum, options.weight_decay);
    const BatchLoss loss = dm_loss(model, cache, dataset);
    TrainLog log;
    auto boundary = [&] {
        const double err = cw->orthogonality_error();
        log.orthogonality.push_back(err);
        if (err > align.orthogonality_tol) ++log.orthogonality_violations;
    };
    auto round = [&](int epoch) {
        const AlignmentReport r = cw->align(concept_means(model, cache, sampled), align.iterations);
        for (std::size_t i = 1; i < r.objective.size(); ++i)
            if (r.objective[i] < r.objective[i - 1] - 1e-12 * (1.0 + std::abs(r.objective[i - 1])))
                log.objective_monotone = false;
        log.alignments.push_back(r);
        log.alignment_epochs.push_back(epoch);
    };
    boundary();
    for (int e = 1; e <= options.epochs; ++e) {
        log.epoch_loss.push_back(run_epoch(model, dataset.size(), options, e - 1, opt, loss));
        // never rotate after the last gradient step: the decoder would not see the new Q
        const bool scheduled = e % align.every == 0 && e < options.epochs;
        const bool fallback = log.alignments.empty() && (e == options.epochs - 1 || options.epochs == 1);
        if (scheduled || fallback) round(e);
        boundary();
        if (hook) hook(e, log.epoch_loss.back());
    }
    return log;
}

void fit_cw_statistics(IntentModel& model, const BeliefCache& cache, const std::vector<int>& entries, int batch) {
    ConceptWhitening* cw = model.concept_whitening();
    if (!cw) throw std::invalid_argument("fit_cw_statistics needs a concept-whitening model");
    if (entries.size() < 2) throw ConfigError("fitting whitening statistics needs at least two samples");
    std::vector<Eigen::MatrixXd> parts;
    Eigen::Index rows = 0;
    for (std::size_t lo = 0; lo < entries.size(); lo += static_cast<std::size_t>(batch)) {
        const std::size_t hi = std::min(entries.size(), lo + static_cast<std::size_t>(batch));
        const std::vector<int> idx(entries.begin() + static_cast<long>(lo), entries.begin() + static_cast<long>(hi));
        parts.push_back(model.position_latents(encode_entries(cache, idx)));
        rows += parts.back().rows();
    }
    Eigen::MatrixXd all(rows, cw->dim());
    rows = 0;
    for (const auto& p : parts) {
        all.middleRows(rows, p.rows()) = p;
        rows += p.rows();
    }
    cw->fit(all);
}

std::vector<std::vector<int>> sample_concept_entries(const std::vector<ConceptDataset>& concepts, int max_samples,
                                                     std::uint64_t seed) {
    std::vector<std::vector<int>> out;
    for (std::size_t j = 0; j < concepts.size(); ++j) {
        std::vector<int> e = concepts[j].entries;
        if (static_cast<int>(e.size()) > max_samples) {
            std::mt19937_64 rng(derive_seed(seed, 1000 + j));
            shuffle_in_place(e, rng);
            e.resize(static_cast<std::size_t>(max_samples));
            std::sort(e.begin(), e.end());
        }
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

template <class Fn>
void for_pooled(IntentModel& model, const BeliefCache& cache, const std::vector<int>& entries, int batch, Fn fn) {
    for (std::size_t lo = 0; lo < entries.size(); lo += static_cast<std::size_t>(batch)) {
        const std::size_t hi = std::min(entries.size(), lo + static_cast<std::size_t>(batch));
        const std::vector<int> idx(entries.begin() + static_cast<long>(lo), entries.begin() + static_cast<long>(hi));
        const Eigen::MatrixXd p = model.pooled_latents(encode_entries(cache, idx));
        for (Eigen::Index r = 0; r < p.rows(); ++r) fn(Eigen::VectorXd(p.row(r).transpose()));
    }
}

}  // namespace

std::vector<Eigen::VectorXd> concept_means(IntentModel& model, const BeliefCache& cache,
                                           const std::vector<std::vector<int>>& entries, int batch) {
    const ConceptWhitening* cw = model.concept_whitening();
    if (!cw || !cw->fitted()) throw std::logic_error("concept means need a fitted concept-whitening model");
    std::vector<Eigen::VectorXd> means;
    for (const auto& e : entries) {
        if (e.empty()) throw std::runtime_error("concept with no entries");
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(cw->dim());
        for_pooled(model, cache, e, batch, [&](const Eigen::VectorXd& p) { sum += cw->whiten(p); });
        means.push_back(sum / static_cast<double>(e.size()));
    }
    return means;
}

Eigen::MatrixXd concept_activation_means(IntentModel& model, const BeliefCache& cache,
                                         const std::vector<std::vector<int>>& entries, int batch) {
    const ConceptWhitening* cw = model.concept_whitening();
    if (!cw || !cw->fitted()) throw std::logic_error("activations need a fitted concept-whitening model");
    const int k = static_cast<int>(entries.size());
    Eigen::MatrixXd out(k, k);
    for (int j = 0; j < k; ++j) {
        const auto& e = entries[static_cast<std::size_t>(j)];
        if (e.empty()) throw std::runtime_error("concept with no entries");
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(k);
        for_pooled(model, cache, e, batch, [&](const Eigen::VectorXd& p) { sum += cw->activations(p, k); });
        out.row(j) = (sum / static_cast<double>(e.size())).transpose();
    }
    return out;
}

int separated_concepts(const Eigen::MatrixXd& m) {
    int n = 0;
    for (Eigen::Index j = 0; j < m.rows(); ++j) {
        Eigen::Index best = 0;
        m.row(j).maxCoeff(&best);
        n += best == j;
    }
    return n;
}

}  // namespace tom
