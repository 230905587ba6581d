#include "tom/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace tom {

namespace {

// Per-cell argmax with ties to the lowest type index, as in the planner's collapse.
BlockType believed_type(const BeliefState& b, Vec2i cell) {
    const double* p = b.cell(cell.x, cell.y);
    return static_cast<BlockType>(std::max_element(p, p + b.num_types) - p);
}

}  // namespace

std::vector<TickPrediction> predict_trajectory(IntentModel& model, const Trajectory& trajectory, double eps,
                                               int concepts, int batch, int mission_ticks) {
    const ConceptWhitening* cw = model.concept_whitening();
    if (concepts > 0 && !cw) throw std::logic_error("concept activations requested from a model without concept whitening");
    if (model.config().width != trajectory.width || model.config().height != trajectory.height)
        throw ConfigError("trajectory grid does not match the model");
    const int X = model.config().width, Y = model.config().height;
    std::vector<TickPrediction> out;
    out.reserve(static_cast<std::size_t>(trajectory.ticks()));
    std::vector<BeliefState> pending;
    std::vector<int> ticks;
    auto flush = [&] {
        if (pending.empty()) return;
        std::vector<const BeliefState*> ptrs;
        for (const auto& b : pending) ptrs.push_back(&b);
        Eigen::MatrixXd pooled;
        const nn::Tensor logp = model.predict(encode_beliefs(ptrs), nullptr, concepts > 0 ? &pooled : nullptr);
        for (std::size_t i = 0; i < pending.size(); ++i) {
            const double* lp = logp.data() + i * static_cast<std::size_t>(X * Y);
            const int best = static_cast<int>(std::max_element(lp, lp + X * Y) - lp);
            TickPrediction p;
            p.tick = ticks[i];
            p.cell = {best % X, best / X};
            p.type = intent_type_of(believed_type(pending[i], p.cell));
            if (concepts > 0) p.activations = cw->activations(pooled.row(static_cast<Eigen::Index>(i)).transpose(), concepts);
            out.push_back(std::move(p));
        }
        pending.clear();
        ticks.clear();
    };
    roll_beliefs(trajectory, eps, mission_ticks, [&](int t, const BeliefState& b) {
        pending.push_back(b);
        ticks.push_back(t);
        if (static_cast<int>(pending.size()) == batch) flush();
    });
    flush();
    return out;
}

Vec2i segment_mode(const std::vector<Vec2i>& cells, int from, int to) {
    if (from > to) throw std::invalid_argument("empty segment");
    struct Tally {
        int count = 0;
        int first = 0;
    };
    std::map<std::pair<int, int>, Tally> tally;
    for (int t = from; t <= to; ++t) {
        const Vec2i c = cells.at(static_cast<std::size_t>(t));
        auto [it, fresh] = tally.try_emplace({c.x, c.y}, Tally{0, t});
        ++it->second.count;
    }
    const auto best = std::max_element(tally.begin(), tally.end(), [](const auto& a, const auto& b) {
        if (a.second.count != b.second.count) return a.second.count < b.second.count;
        return a.second.first > b.second.first;
    });
    return {best->first.first, best->first.second};
}

std::vector<SegmentedPrediction> segment_predictions(int trajectory_id, const std::vector<Visit>& visits,
                                                     const std::vector<Vec2i>& cells, const LocationIndex& index,
                                                     const std::vector<WorldState>& states) {
    std::vector<SegmentedPrediction> out;
    int from = 0;
    for (const Visit& v : visits) {
        if (v.end >= static_cast<int>(cells.size())) break;
        SegmentedPrediction s;
        s.trajectory = trajectory_id;
        s.first_tick = from;
        s.last_tick = v.end;
        s.mode = segment_mode(cells, from, v.end);
        s.target = v;
        s.locations = index.count(states.at(static_cast<std::size_t>(v.end)));
        s.correct = index.matches(s.mode, v.cell);
        out.push_back(s);
        from = v.end + 1;
    }
    return out;
}

AccuracyReport summarize_accuracy(const std::vector<SegmentedPrediction>& segments, std::vector<int> skipped) {
    AccuracyReport r;
    r.details = segments;
    r.skipped = std::move(skipped);
    r.segments = static_cast<int>(segments.size());
    if (segments.empty()) return r;
    double hits = 0.0, chance = 0.0;
    for (const auto& s : segments) {
        hits += s.correct;
        chance += s.locations > 0 ? 1.0 / s.locations : 0.0;
    }
    r.accuracy = hits / r.segments;
    r.chance = chance / r.segments;
    return r;
}

EvalResult evaluate_intent_accuracy(IntentModel& model, const Map& map, const std::vector<Trajectory>& trajectories,
                                    const std::vector<int>& ids, double eps, int concepts, int mission_ticks) {
    if (ids.empty()) throw ConfigError("no test trajectories to evaluate");
    const LocationIndex index(map);
    EvalResult res;
    std::vector<SegmentedPrediction> all;
    std::vector<int> skipped;
    for (int id : ids) {
        const Trajectory& tr = trajectories.at(static_cast<std::size_t>(id));
        res.predictions.push_back(predict_trajectory(model, tr, eps, concepts, 64, mission_ticks));
        std::vector<Vec2i> cells;
        for (const auto& p : res.predictions.back()) cells.push_back(p.cell);
        const auto segs = segment_predictions(id, find_visits(map, tr), cells, index, replay_states(map, tr));
        if (segs.empty()) skipped.push_back(id);
        all.insert(all.end(), segs.begin(), segs.end());
    }
    res.accuracy = summarize_accuracy(all, std::move(skipped));
    return res;
}

std::vector<ActivationRecord> activation_records(const std::vector<int>& ids,
                                                 const std::vector<std::vector<TickPrediction>>& predictions) {
    if (ids.size() != predictions.size()) throw std::invalid_argument("ids and predictions differ in length");
    std::vector<ActivationRecord> out;
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (const auto& p : predictions[i]) {
            if (!p.type || p.activations.size() == 0) continue;
            out.push_back({ids[i], p.tick, p.activations, *p.type});
        }
    return out;
}

Eigen::VectorXd normalize_activation(const Eigen::VectorXd& a) {
    Eigen::VectorXd r = a.cwiseMax(0.0);
    const double s = r.sum();
    if (s > 0.0) r /= s;
    return r;
}

ActivationTable mean_activation_table(const std::vector<ActivationRecord>& records, int k,
                                      const std::function<bool(const ActivationRecord&)>& filter) {
    ActivationTable t;
    t.mean = Eigen::MatrixXd::Zero(k, kNumIntentTypes);
    for (const auto& r : records) {
        if (filter && !filter(r)) continue;
        if (r.activations.size() != k) throw std::invalid_argument("activation length does not match k");
        const int c = static_cast<int>(r.type);
        t.mean.col(c) += normalize_activation(r.activations);
        ++t.counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < kNumIntentTypes; ++c)
        if (t.counts[static_cast<std::size_t>(c)] > 0) t.mean.col(c) /= t.counts[static_cast<std::size_t>(c)];
    return t;
}

// --- decision tree ---

namespace {

int majority(const std::vector<int>& y, const std::vector<int>& idx, int classes) {
    std::vector<int> counts(static_cast<std::size_t>(classes), 0);
    for (int i : idx) ++counts[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

double gini(const std::vector<int>& counts, int n) {
    if (n == 0) return 0.0;
    double s = 1.0;
    for (int c : counts) {
        const double p = static_cast<double>(c) / n;
        s -= p * p;
    }
    return s;
}

void check_labels(const Eigen::MatrixXd& X, const std::vector<int>& y, int classes) {
    if (X.rows() != static_cast<Eigen::Index>(y.size()) || y.empty()) throw std::invalid_argument("features and labels differ in length");
    for (int c : y)
        if (c < 0 || c >= classes) throw std::invalid_argument("label out of range");
}

}  // namespace

void DecisionTree::fit(const Eigen::MatrixXd& X, const std::vector<int>& y, int classes, int max_depth,
                       int min_samples_split) {
    check_labels(X, y, classes);
    classes_ = classes;
    max_depth_ = max_depth;
    min_split_ = std::max(2, min_samples_split);
    nodes_.clear();
    std::vector<int> idx(y.size());
    std::iota(idx.begin(), idx.end(), 0);
    build(X, y, idx, 0);
}

int DecisionTree::build(const Eigen::MatrixXd& X, const std::vector<int>& y, std::vector<int>& idx, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_[static_cast<std::size_t>(id)].label = majority(y, idx, classes_);
    const int n = static_cast<int>(idx.size());
    std::vector<int> total(static_cast<std::size_t>(classes_), 0);
    for (int i : idx) ++total[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
    const double parent = gini(total, n);
    if (depth >= max_depth_ || n < min_split_ || parent == 0.0) return id;

    double best = parent;
    int best_f = -1;
    double best_t = 0.0;
    std::vector<int> order = idx;
    for (int f = 0; f < X.cols(); ++f) {
        std::sort(order.begin(), order.end(), [&](int a, int b) { return X(a, f) < X(b, f); });
        std::vector<int> left(static_cast<std::size_t>(classes_), 0);
        std::vector<int> right = total;
        for (int i = 0; i + 1 < n; ++i) {
            const int c = y[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
            ++left[static_cast<std::size_t>(c)];
            --right[static_cast<std::size_t>(c)];
            const double a = X(order[static_cast<std::size_t>(i)], f), b = X(order[static_cast<std::size_t>(i) + 1], f);
            if (a == b) continue;
            const double g = ((i + 1) * gini(left, i + 1) + (n - i - 1) * gini(right, n - i - 1)) / n;
            if (g < best - 1e-12) {
                best = g;
                best_f = f;
                best_t = 0.5 * (a + b);
            }
        }
    }
    if (best_f < 0) return id;
    std::vector<int> l, r;
    for (int i : idx) (X(i, best_f) <= best_t ? l : r).push_back(i);
    const int li = build(X, y, l, depth + 1);
    const int ri = build(X, y, r, depth + 1);
    Node& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = best_f;
    node.threshold = best_t;
    node.left = li;
    node.right = ri;
    return id;
}

int DecisionTree::predict(const Eigen::VectorXd& x) const {
    if (nodes_.empty()) throw std::logic_error("decision tree is not fitted");
    int i = 0;
    while (nodes_[static_cast<std::size_t>(i)].feature >= 0) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        i = x(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes_[static_cast<std::size_t>(i)].label;
}

int DecisionTree::depth() const {
    std::vector<std::pair<int, int>> stack{{0, 0}};
    int d = 0;
    while (!stack.empty() && !nodes_.empty()) {
        auto [i, k] = stack.back();
        stack.pop_back();
        d = std::max(d, k);
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.feature >= 0) {
            stack.push_back({n.left, k + 1});
            stack.push_back({n.right, k + 1});
        }
    }
    return d;
}

// --- linear max-margin ---

void LinearMargin::fit(const Eigen::MatrixXd& X, const std::vector<int>& y, int classes, int epochs, double lambda) {
    check_labels(X, y, classes);
    const Eigen::Index n = X.rows(), d = X.cols();
    mean_ = X.colwise().mean().transpose();
    scale_ = ((X.rowwise() - mean_.transpose()).array().square().colwise().mean().sqrt()).transpose();
    for (Eigen::Index j = 0; j < d; ++j)
        if (scale_(j) < 1e-12) scale_(j) = 1.0;
    const Eigen::MatrixXd Z = (X.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
    W_ = Eigen::MatrixXd::Zero(classes, d);
    b_ = Eigen::VectorXd::Zero(classes);
    for (int c = 0; c < classes; ++c) {
        Eigen::VectorXd s(n);
        for (Eigen::Index i = 0; i < n; ++i) s(i) = y[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
        Eigen::VectorXd w = Eigen::VectorXd::Zero(d), best_w = w;
        double b = 0.0, best_b = 0.0, best_obj = INFINITY;
        for (int t = 0; t < epochs; ++t) {
            const Eigen::VectorXd margin = s.cwiseProduct(Z * w + Eigen::VectorXd::Constant(n, b));
            double obj = 0.5 * lambda * w.squaredNorm();
            Eigen::VectorXd gw = lambda * w;
            double gb = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
                if (margin(i) < 1.0) {
                    obj += (1.0 - margin(i)) / n;
                    gw -= s(i) * Z.row(i).transpose() / n;
                    gb -= s(i) / n;
                }
            if (obj < best_obj) {
                best_obj = obj;
                best_w = w;
                best_b = b;
            }
            const double step = 1.0 / std::sqrt(t + 1.0);
            w -= step * gw;
            b -= step * gb;
        }
        W_.row(c) = best_w.transpose();
        b_(c) = best_b;
    }
}

int LinearMargin::predict(const Eigen::VectorXd& x) const {
    if (W_.size() == 0) throw std::logic_error("linear classifier is not fitted");
    const Eigen::VectorXd z = (x - mean_).cwiseQuotient(scale_);
    const Eigen::VectorXd score = W_ * z + b_;
    Eigen::Index best = 0;
    score.maxCoeff(&best);
    return static_cast<int>(best);
}

std::string classifier_name(ClassifierKind k) { return k == ClassifierKind::decision_tree ? "decision_tree" : "linear_margin"; }

namespace {

double fit_and_score(const Eigen::MatrixXd& X, const std::vector<int>& y, const std::vector<int>& train,
                     const std::vector<int>& test, ClassifierKind kind) {
    Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(train.size()), X.cols());
    std::vector<int> ytr;
    for (std::size_t i = 0; i < train.size(); ++i) {
        Xtr.row(static_cast<Eigen::Index>(i)) = X.row(train[i]);
        ytr.push_back(y[static_cast<std::size_t>(train[i])]);
    }
    DecisionTree tree;
    LinearMargin lin;
    if (kind == ClassifierKind::decision_tree)
        tree.fit(Xtr, ytr, kNumIntentTypes);
    else
        lin.fit(Xtr, ytr, kNumIntentTypes);
    int hits = 0;
    for (int i : test) {
        const Eigen::VectorXd x = X.row(i).transpose();
        const int p = kind == ClassifierKind::decision_tree ? tree.predict(x) : lin.predict(x);
        hits += p == y[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace

ProxyResult proxy_classifier(const std::vector<ActivationRecord>& records, ClassifierKind kind, std::uint64_t seed) {
    if (records.size() < 5) throw std::invalid_argument("too few activation records for an 80/20 split");
    const Eigen::Index k = records.front().activations.size();
    Eigen::MatrixXd X(static_cast<Eigen::Index>(records.size()), k);
    std::vector<int> y;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].activations.size() != k) throw std::invalid_argument("activation vectors differ in length");
        X.row(static_cast<Eigen::Index>(i)) = records[i].activations.transpose();
        y.push_back(static_cast<int>(records[i].type));
    }
    if (std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end())
        throw std::invalid_argument("proxy classifier needs at least two intent types");

    std::vector<int> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    const std::size_t n_train = order.size() * 4 / 5;
    const std::vector<int> train(order.begin(), order.begin() + static_cast<long>(n_train));
    const std::vector<int> test(order.begin() + static_cast<long>(n_train), order.end());

    ProxyResult r;
    r.train = static_cast<int>(train.size());
    r.test = static_cast<int>(test.size());
    r.accuracy = fit_and_score(X, y, train, test, kind);
    std::vector<int> shuffled = y;
    std::mt19937_64 prng(derive_seed(seed, 1));
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[prng() % i]);
    r.control_accuracy = fit_and_score(X, shuffled, train, test, kind);
    std::array<int, kNumIntentTypes> counts{};
    for (int i : test) ++counts[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
    r.majority = static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(test.size());
    return r;
}

std::string segments_csv(const std::vector<SegmentedPrediction>& segments) {
    std::ostringstream o;
    o << "trajectory,first_tick,last_tick,mode_x,mode_y,target_x,target_y,target_type,locations,correct\n";
    for (const auto& s : segments)
        o << s.trajectory << ',' << s.first_tick << ',' << s.last_tick << ',' << s.mode.x << ',' << s.mode.y << ','
          << s.target.cell.x << ',' << s.target.cell.y << ',' << intent_type_name(s.target.type) << ',' << s.locations
          << ',' << (s.correct ? 1 : 0) << '\n';
    return o.str();
}

std::string activations_csv(const std::vector<ActivationRecord>& records, const std::vector<std::string>& names) {
    std::ostringstream o;
    o.precision(10);
    o << "trajectory,tick,type";
    for (const auto& n : names) o << ',' << n;
    o << '\n';
    for (const auto& r : records) {
        o << r.trajectory << ',' << r.tick << ',' << intent_type_name(r.type);
        for (Eigen::Index j = 0; j < r.activations.size(); ++j) o << ',' << r.activations(j);
        o << '\n';
    }
    return o.str();
}

}  // namespace tom
