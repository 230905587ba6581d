// Command-line driver: simulate -> train (no_cw, cw, cw_transfer) -> eval, plus gradcheck
// and inspect. Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tom/diagnostics.hpp"
#include "tom/nn/checkpoint.hpp"
#include "tom/study.hpp"
#include "tom/trajectory_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tom;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Options {
    std::string config;
    std::optional<std::string> mode;
    std::optional<std::string> concept_set;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> checkpoint;
    std::optional<int> trajectory;
};

struct Context {
    RunConfig cfg;
    std::string hash;
    fs::path out;
};

const auto kStart = std::chrono::steady_clock::now();

void log(const std::string& msg) {
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - kStart).count();
    std::fprintf(stderr, "[%7.1fs] %s\n", t, msg.c_str());
}

Context make_context(const Options& o) {
    Context c;
    c.cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (o.mode) c.cfg.mode = run_mode_from_name(*o.mode);
    if (o.concept_set) c.cfg.concept_set = concept_set_from_name(*o.concept_set);
    if (o.seed) c.cfg.training_seed = *o.seed;
    if (const char* env = std::getenv("TOM_OUTPUT_DIR"); env && *env) c.cfg.output_dir = env;
    if (o.out) c.cfg.output_dir = *o.out;
    c.hash = config_hash(c.cfg);
    c.out = c.cfg.output_dir;
    std::error_code ec;
    fs::create_directories(c.out, ec);
    if (ec || !fs::is_directory(c.out)) throw ConfigError("cannot create output directory " + c.out.string());
    return c;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + p.string());
    f << text;
    if (!f) throw ConfigError("failed writing " + p.string());
}

std::string read_text(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot read " + p.string());
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

// Simulation inputs only; training and eval check trajectories against it.
std::string simulation_key(const RunConfig& c) {
    RunConfig k;
    k.scenario = c.scenario;
    k.map_seed = c.map_seed;
    k.agent_seed = c.agent_seed;
    k.trajectories = c.trajectories;
    k.mission_ticks = c.mission_ticks;
    k.profile_noise = c.profile_noise;
    return config_hash(k);
}

// Everything the inverse action model depends on.
std::string iam_key(const RunConfig& c) {
    RunConfig k = c;
    k.mode = RunMode::no_cw;
    k.concept_set = 1;
    k.lambda = 0.5;
    k.dm_epochs = 1;
    k.align = AlignOptions{};
    return config_hash(k);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string trajectory_file(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "t%03d.mgt", i);
    return buf;
}

// --- simulate ---

int cmd_simulate(const Options& o) {
    const Context ctx = make_context(o);
    const Map map = study_map(ctx.cfg);
    log("map " + map.id + " generated");
    const auto trajs = study_trajectories(ctx.cfg, map);
    fs::create_directories(ctx.out / "trajectories");
    save_map(map, (ctx.out / "map.json").string());
    json list = json::array();
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        const std::string bytes = encode_trajectory(trajs[i]);
        write_text(ctx.out / "trajectories" / trajectory_file(static_cast<int>(i)), bytes);
        list.push_back({{"id", i},
                        {"file", "trajectories/" + trajectory_file(static_cast<int>(i))},
                        {"profile", trajs[i].profile.id},
                        {"strategy", std::string(strategy_name(trajs[i].profile.strategy))},
                        {"seed", trajs[i].seed},
                        {"ticks", trajs[i].ticks()},
                        {"score", trajs[i].final_score},
                        {"stalled", trajs[i].stalled},
                        {"fnv1a", hex64(fnv1a({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}))}});
    }
    const json manifest = {{"config_hash", ctx.hash},
                           {"simulation_key", simulation_key(ctx.cfg)},
                           {"map", {{"file", "map.json"}, {"id", map.id}, {"seed", ctx.cfg.map_seed}}},
                           {"trajectories", list}};
    write_text(ctx.out / "manifest.json", manifest.dump(2) + "\n");
    write_text(ctx.out / "config.json", run_config_to_json(ctx.cfg) + "\n");
    log("wrote " + std::to_string(trajs.size()) + " trajectories to " + (ctx.out / "trajectories").string());
    return 0;
}

StudyData load_study(const Context& ctx) {
    const fs::path mpath = ctx.out / "manifest.json";
    if (!fs::exists(mpath)) throw ConfigError("no trajectories in " + ctx.out.string() + " (run simulate first)");
    const json manifest = json::parse(read_text(mpath));
    if (manifest.at("simulation_key").get<std::string>() != simulation_key(ctx.cfg))
        throw ConfigError("trajectories in " + ctx.out.string() + " were simulated with a different configuration");
    Map map = load_map((ctx.out / manifest.at("map").at("file").get<std::string>()).string());
    std::vector<Trajectory> trajs;
    for (const auto& t : manifest.at("trajectories")) {
        const fs::path p = ctx.out / t.at("file").get<std::string>();
        if (!fs::exists(p)) throw ConfigError("missing trajectory file " + p.string());
        trajs.push_back(load_trajectory(p.string()));
    }
    return prepare_study(ctx.cfg, std::move(map), std::move(trajs));
}

std::string loss_csv(const std::string& hash, const TrainLog& log) {
    std::ostringstream s;
    s << "# config_hash=" << hash << "\nepoch,loss\n";
    for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) s << e + 1 << ',' << fmt(log.epoch_loss[e]) << '\n';
    return s.str();
}

EpochHook progress(const std::string& what) {
    return [what](int e, double l) { log(what + " epoch " + std::to_string(e) + " loss " + fmt(l)); };
}

std::string checkpoint_meta(const Context& ctx, const std::string& key) {
    return json{{"config_hash", ctx.hash}, {"key", key}, {"mode", run_mode_name(ctx.cfg.mode)},
                {"concept_set", ctx.cfg.concept_set}}
        .dump();
}

std::unique_ptr<IntentModel> obtain_iam(const Context& ctx, const StudyData& data) {
    auto iam = std::make_unique<IntentModel>(iam_model_config(ctx.cfg));
    const fs::path path = ctx.out / iam_checkpoint_name();
    const std::string key = iam_key(ctx.cfg);
    if (fs::exists(path)) {
        const nn::Checkpoint ck = nn::load_checkpoint(path.string());
        if (json::parse(ck.metadata).at("extra").value("key", "") == key) {
            iam->load(ck);
            log("reusing " + path.string());
            return iam;
        }
    }
    const IamDataset ds = build_iam_dataset(data.cache, ctx.cfg.m, ctx.cfg.dataset_seed);
    write_text(ctx.out / "iam_dataset.tds", encode_iam_dataset(data.cache, data.split.train, ds));
    log("inverse action dataset: " + std::to_string(ds.samples.size()) + " samples");
    const TrainLog lg = train_iam(*iam, data.cache, ds, iam_train_options(ctx.cfg), progress("iam"));
    write_text(ctx.out / "iam_loss.csv", loss_csv(ctx.hash, lg));
    nn::save_checkpoint(iam->to_checkpoint(checkpoint_meta(ctx, key)), path.string());
    return iam;
}

// --- train ---

int cmd_train(const Options& o) {
    const Context ctx = make_context(o);
    const StudyData data = load_study(ctx);
    log("belief cache: " + std::to_string(data.cache.size()) + " states");
    const auto iam = obtain_iam(ctx, data);
    const DmDataset ds = build_dm_dataset(data.cache, data.trajectories, data.visits, *iam, ctx.cfg.lambda);
    const std::string tag = run_tag(ctx.cfg.mode, ctx.cfg.concept_set);
    TrainLog lg;
    std::optional<IntentModel> dm;
    json metrics = {{"config_hash", ctx.hash}, {"tag", tag}};
    if (ctx.cfg.mode == RunMode::no_cw) {
        dm.emplace(dm_model_config(ctx.cfg, false));
        lg = train_dm(*dm, data.cache, ds, dm_train_options(ctx.cfg), progress("dm"));
    } else {
        dm.emplace(dm_model_config(ctx.cfg, true));
        const auto concepts = build_concept_datasets(data.cache, data.trajectories, concept_set(ctx.cfg.concept_set));
        write_text(ctx.out / ("concepts_set" + std::to_string(ctx.cfg.concept_set) + ".tds"),
                   encode_concept_datasets(data.cache, data.split.train, concepts));
        if (ctx.cfg.mode == RunMode::cw_transfer) {
            const fs::path src = ctx.out / dm_checkpoint_name(RunMode::no_cw, 1);
            if (!fs::exists(src)) throw ConfigError("cw_transfer needs " + src.string() + " (train --mode no_cw first)");
            const int copied = dm->transfer_from(nn::load_checkpoint(src.string()));
            fit_cw_statistics(*dm, data.cache, ds.entries);
            metrics["transferred_tensors"] = copied;
            nn::save_checkpoint(dm->to_checkpoint(checkpoint_meta(ctx, "epoch0")),
                                (ctx.out / ("dm_" + tag + "_epoch0.ckpt")).string());
            log("transferred " + std::to_string(copied) + " tensors; whitening fitted on one pass");
        }
        lg = train_dm_cw(*dm, data.cache, ds, concepts, dm_train_options(ctx.cfg), ctx.cfg.align, progress("dm/cw"));
        std::ostringstream orth;
        orth << "# config_hash=" << ctx.hash << "\nepoch,orthogonality_error\n";
        for (std::size_t e = 0; e < lg.orthogonality.size(); ++e) orth << e << ',' << fmt(lg.orthogonality[e]) << '\n';
        write_text(ctx.out / ("orthogonality_" + tag + ".csv"), orth.str());
        const auto sampled = sample_concept_entries(concepts, ctx.cfg.align.max_samples, dm_train_options(ctx.cfg).seed);
        const Eigen::MatrixXd am = concept_activation_means(*dm, data.cache, sampled);
        metrics["orthogonality_violations"] = lg.orthogonality_violations;
        metrics["alignment_objective_monotone"] = lg.objective_monotone;
        metrics["alignment_rounds"] = lg.alignments.size();
        metrics["alignment_epochs"] = lg.alignment_epochs;
        metrics["separated_concepts"] = separated_concepts(am);
        metrics["concepts"] = concepts.size();
    }
    metrics["epoch_loss"] = lg.epoch_loss;
    write_text(ctx.out / ("train_" + tag + "_loss.csv"), loss_csv(ctx.hash, lg));
    write_text(ctx.out / ("train_" + tag + ".json"), metrics.dump(2) + "\n");
    nn::save_checkpoint(dm->to_checkpoint(checkpoint_meta(ctx, tag)), (ctx.out / dm_checkpoint_name(ctx.cfg.mode, ctx.cfg.concept_set)).string());
    log("saved " + dm_checkpoint_name(ctx.cfg.mode, ctx.cfg.concept_set));
    return 0;
}

// --- eval ---

std::unique_ptr<IntentModel> load_desire_model(const Context& ctx, const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("checkpoint " + path.string() + " not found (run train first)");
    const nn::Checkpoint ck = nn::load_checkpoint(path.string());
    const ModelConfig mc = model_config_from_checkpoint(ck);
    if (mc.kind != ModelKind::desire) throw ConfigError(path.string() + " is not a desire model");
    if (mc.width != ctx.cfg.scenario.width || mc.height != ctx.cfg.scenario.height)
        throw ConfigError("checkpoint grid " + std::to_string(mc.width) + "x" + std::to_string(mc.height) +
                          " does not match the configured scenario");
    auto m = std::make_unique<IntentModel>(mc);
    m->load(ck);
    const json extra = json::parse(ck.metadata).at("extra");
    if (mc.concept_whitening && extra.value("concept_set", 0) != ctx.cfg.concept_set)
        throw ConfigError("checkpoint was trained with concept set " + std::to_string(extra.value("concept_set", 0)));
    return m;
}

fs::path checkpoint_path(const Context& ctx, const Options& o) {
    return o.checkpoint ? fs::path(*o.checkpoint) : ctx.out / dm_checkpoint_name(ctx.cfg.mode, ctx.cfg.concept_set);
}

json table_json(const ActivationTable& t, const std::vector<ConceptDefinition>& defs) {
    json rows = json::array();
    for (Eigen::Index j = 0; j < t.mean.rows(); ++j) {
        json r = {{"concept", defs[static_cast<std::size_t>(j)].name}};
        for (int c = 0; c < kNumIntentTypes; ++c) r[intent_type_name(static_cast<IntentType>(c))] = t.mean(j, c);
        rows.push_back(r);
    }
    json counts;
    for (int c = 0; c < kNumIntentTypes; ++c)
        counts[intent_type_name(static_cast<IntentType>(c))] = t.counts[static_cast<std::size_t>(c)];
    return {{"rows", rows}, {"counts", counts}};
}

void write_summary(const fs::path& out) {
    std::vector<json> rows;
    for (const auto& e : fs::directory_iterator(out)) {
        const std::string n = e.path().filename().string();
        if (n.rfind("eval_", 0) == 0 && e.path().extension() == ".json") rows.push_back(json::parse(read_text(e.path())));
    }
    std::sort(rows.begin(), rows.end(), [](const json& a, const json& b) { return a.at("tag") < b.at("tag"); });
    std::ostringstream s;
    s << "tag,config_hash,accuracy,chance,segments\n";
    for (const auto& r : rows)
        s << r.at("tag").get<std::string>() << ',' << r.at("config_hash").get<std::string>() << ','
          << fmt(r.at("accuracy").get<double>()) << ',' << fmt(r.at("chance").get<double>()) << ','
          << r.at("segments").get<int>() << '\n';
    write_text(out / "summary.csv", s.str());
}

int cmd_eval(const Options& o) {
    const Context ctx = make_context(o);
    const StudyData data = load_study(ctx);
    const fs::path path = checkpoint_path(ctx, o);
    const auto dm = load_desire_model(ctx, path);
    const bool cw = dm->concept_whitening() != nullptr;
    const auto defs = concept_set(ctx.cfg.concept_set);
    const int k = cw ? static_cast<int>(defs.size()) : 0;
    std::string tag = path.stem().string();
    if (tag.rfind("dm_", 0) == 0) tag = tag.substr(3);
    log("evaluating " + path.string() + " on " + std::to_string(data.split.test.size()) + " held-out trajectories");
    const EvalResult ev =
        evaluate_intent_accuracy(*dm, data.map, data.trajectories, data.split.test, ctx.cfg.eps, k, ctx.cfg.mission_ticks);
    const AccuracyReport& a = ev.accuracy;
    json report = {{"config_hash", ctx.hash},
                   {"tag", tag},
                   {"checkpoint", path.filename().string()},
                   {"accuracy", a.accuracy},
                   {"chance", a.chance},
                   {"accuracy_over_chance", a.chance > 0 ? a.accuracy / a.chance : 0.0},
                   {"segments", a.segments},
                   {"skipped_trajectories", a.skipped},
                   {"test_trajectories", data.split.test}};
    write_text(ctx.out / ("segments_" + tag + ".csv"), "# config_hash=" + ctx.hash + "\n" + segments_csv(a.details));
    if (cw) {
        std::vector<std::string> names;
        for (const auto& d : defs) names.push_back(d.name);
        const auto recs = activation_records(data.split.test, ev.predictions);
        write_text(ctx.out / ("activations_" + tag + ".csv"), "# config_hash=" + ctx.hash + "\n" + activations_csv(recs, names));
        report["activation_table"] = table_json(mean_activation_table(recs, k), defs);
        report["activation_table_after_expiry"] =
            table_json(mean_activation_table(recs, k,
                                             [&](const ActivationRecord& r) {
                                                 return r.tick >= ctx.cfg.scenario.critical_expiry_ticks;
                                             }),
                       defs);
        json proxies;
        for (ClassifierKind kind : {ClassifierKind::decision_tree, ClassifierKind::linear_margin}) {
            try {
                const ProxyResult p = proxy_classifier(recs, kind, derive_seed(ctx.cfg.training_seed, 20));
                proxies[classifier_name(kind)] = {{"accuracy", p.accuracy},
                                                  {"control_accuracy", p.control_accuracy},
                                                  {"majority", p.majority},
                                                  {"train", p.train},
                                                  {"test", p.test}};
            } catch (const std::invalid_argument& e) {
                proxies[classifier_name(kind)] = {{"error", e.what()}};
            }
        }
        report["proxy_classifiers"] = proxies;
    }
    write_text(ctx.out / ("eval_" + tag + ".json"), report.dump(2) + "\n");
    write_summary(ctx.out);
    std::printf("%s accuracy %.4f chance %.4f segments %d\n", tag.c_str(), a.accuracy, a.chance, a.segments);
    return 0;
}

// --- gradcheck ---

int cmd_gradcheck(const Options& o) {
    const Context ctx = make_context(o);
    auto checks = layer_gradient_checks();
    for (auto& c : model_gradient_checks()) checks.push_back(std::move(c));
    json rows = json::array();
    bool ok = true;
    for (const auto& c : checks) {
        std::printf("%-26s max_rel_error %.3e  tol %.0e  %s\n", c.name.c_str(), c.report.max_rel_error, c.tolerance,
                    c.passed() ? "ok" : "FAILED");
        rows.push_back({{"name", c.name},
                        {"max_rel_error", c.report.max_rel_error},
                        {"tolerance", c.tolerance},
                        {"worst", c.report.worst},
                        {"checked", c.report.checked},
                        {"passed", c.passed()}});
        ok = ok && c.passed();
    }
    write_text(ctx.out / "gradcheck.json", json{{"config_hash", ctx.hash}, {"checks", rows}}.dump(2) + "\n");
    return ok ? 0 : kExitNumeric;
}

// --- inspect ---

int cmd_inspect(const Options& o) {
    const Context ctx = make_context(o);
    const StudyData data = load_study(ctx);
    const fs::path path = checkpoint_path(ctx, o);
    const auto dm = load_desire_model(ctx, path);
    const int id = o.trajectory ? *o.trajectory : data.split.test.front();
    if (id < 0 || id >= static_cast<int>(data.trajectories.size()))
        throw ConfigError("trajectory " + std::to_string(id) + " does not exist");
    const auto defs = concept_set(ctx.cfg.concept_set);
    const int k = dm->concept_whitening() ? static_cast<int>(defs.size()) : 0;
    const auto preds =
        predict_trajectory(*dm, data.trajectories[static_cast<std::size_t>(id)], ctx.cfg.eps, k, 64, ctx.cfg.mission_ticks);
    std::ostringstream s;
    s << "# config_hash=" << ctx.hash << "\ntick,x,y,type";
    for (int j = 0; j < k; ++j) s << ',' << defs[static_cast<std::size_t>(j)].name;
    s << '\n';
    for (const auto& p : preds) {
        s << p.tick << ',' << p.cell.x << ',' << p.cell.y << ',' << (p.type ? intent_type_name(*p.type) : "none");
        for (int j = 0; j < k; ++j) s << ',' << fmt(p.activations(j));
        s << '\n';
    }
    const std::string name = "inspect_" + path.stem().string() + "_t" + std::to_string(id) + ".csv";
    write_text(ctx.out / name, s.str());
    log("wrote " + (ctx.out / name).string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Theory-of-mind intent models with concept whitening on a search-and-rescue grid world"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "run configuration (JSON)");
        sub->add_option("--mode", o.mode, "no_cw, cw or cw_transfer");
        sub->add_option("--concept-set", o.concept_set, "I, II or III");
        sub->add_option("--seed", o.seed, "training seed override");
        sub->add_option("--out", o.out, "output directory (overrides TOM_OUTPUT_DIR and the config)");
    };
    auto* sim = app.add_subcommand("simulate", "generate the map and agent trajectories");
    auto* train = app.add_subcommand("train", "train the inverse action model and a desire model");
    auto* eval = app.add_subcommand("eval", "evaluate a desire model on the held-out split");
    auto* grad = app.add_subcommand("gradcheck", "finite-difference checks for every layer and both models");
    auto* insp = app.add_subcommand("inspect", "dump per-tick predictions and activations for one trajectory");
    for (auto* s : {sim, train, eval, grad, insp}) common(s);
    for (auto* s : {eval, insp}) s->add_option("--checkpoint", o.checkpoint, "desire model checkpoint to load");
    insp->add_option("--trajectory", o.trajectory, "trajectory id (default: first held-out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }
    try {
        if (*sim) return cmd_simulate(o);
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*grad) return cmd_gradcheck(o);
        if (*insp) return cmd_inspect(o);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const nn::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitConfig;
    } catch (const TrajectoryFormatError& e) {
        std::fprintf(stderr, "trajectory error: %s\n", e.what());
        return kExitConfig;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
