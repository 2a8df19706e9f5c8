#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pasr/pasr.hpp"

namespace fs = std::filesystem;
using namespace pasr;

namespace {

struct RunOptions {
    std::string config_path;
    std::map<std::string, std::string> values;
    bool no_geo = false, no_grid = false, no_decoder = false, unweighted = false;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("--config", o.config_path, "key=value file; flags given here override it");
    for (const auto& [key, def] : to_key_values(RunConfig{})) {
        cmd->add_option_function<std::string>(
            "--" + key, [&o, key = key](const std::string& v) { o.values[key] = v; }, "default: " + def);
    }
    cmd->add_flag("--no-geo-encoder", o.no_geo, "drop the geohash n-gram encoder");
    cmd->add_flag("--no-grid-mapper", o.no_grid, "drop the grid row/column embeddings");
    cmd->add_flag("--no-target-decoder", o.no_decoder, "score against the last encoder row");
    cmd->add_flag("--unweighted-loss", o.unweighted, "plain binary cross-entropy");
}

RunConfig resolve(const RunOptions& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
    for (const auto& [k, v] : o.values) apply_key(c, k, v);
    if (o.no_geo) c.model.use_geo_encoder = false;
    if (o.no_grid) c.model.use_grid_mapper = false;
    if (o.no_decoder) c.model.use_target_decoder = false;
    if (o.unweighted) c.model.weighted_loss = false;
    c.model.validate();
    return c;
}

TimestampFormat parse_format(const std::string& s) {
    if (s == "auto") return TimestampFormat::automatic;
    if (s == "iso8601") return TimestampFormat::iso8601;
    if (s == "epoch") return TimestampFormat::epoch;
    throw std::invalid_argument("unknown format '" + s + "' (auto, iso8601, epoch)");
}

FilterOptions filter_options(const RunConfig& c) {
    FilterOptions f;
    if (c.min_user_checkins < 0 || c.min_location_visits < 0) throw std::domain_error("filter thresholds must be >= 0");
    f.min_user_checkins = static_cast<size_t>(c.min_user_checkins);
    f.min_location_visits = static_cast<size_t>(c.min_location_visits);
    if (c.filter_mode == "fixpoint") {
        f.mode = FilterMode::fixpoint;
    } else if (c.filter_mode == "single-pass") {
        f.mode = FilterMode::single_pass;
    } else {
        throw std::invalid_argument("unknown filter-mode '" + c.filter_mode + "' (fixpoint, single-pass)");
    }
    return f;
}

IngestReport read_data(const RunConfig& c) {
    if (c.data.empty()) throw std::invalid_argument("no dataset given (--data)");
    return ingest(c.data, parse_format(c.format));
}

void report_ingest(std::ostream& os, const IngestReport& rep) {
    os << "rows\t" << rep.valid_rows << "\nmalformed\t" << rep.malformed_rows;
    if (!rep.malformed_lines.empty()) {
        os << "\t(lines";
        for (auto l : rep.malformed_lines) os << ' ' << l;
        os << (rep.malformed_rows > rep.malformed_lines.size() ? " ...)" : ")");
    }
    os << '\n';
}

Experiment load_experiment(const RunConfig& c, const fs::path& out) {
    auto filtered = filter_dataset(read_data(c).dataset, filter_options(c));
    std::cerr << summarize(filtered);
    std::optional<KnnIndex> cached;
    const auto sidecar = (out / ("knn-" + std::to_string(c.model.knn) + ".bin")).string();
    if (c.model.sampler != SamplerKind::uniform) {
        cached = load_knn_index(sidecar, filtered.provenance_hash, static_cast<size_t>(c.model.knn));
    }
    const bool had = cached.has_value();
    auto ex = prepare_experiment(std::move(filtered), c, std::move(cached));
    if (ex.knn && !had) save_knn_index(sidecar, *ex.knn, ex.dataset.provenance_hash);
    for (const auto& w : ex.warnings) std::cerr << "warning: " << w << '\n';
    return ex;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p);
    if (!out) throw InputError("cannot write " + p.string());
    out << s;
}

int cmd_ingest(const RunOptions& o) {
    const auto c = resolve(o);
    const auto rep = read_data(c);
    report_ingest(std::cout, rep);
    std::cout << "# raw\n" << summarize(rep.dataset);
    const auto filtered = filter_dataset(rep.dataset, filter_options(c));
    std::cout << "# filtered\n" << summarize(filtered);
    return 0;
}

int cmd_train(const RunOptions& o) {
    const auto c = resolve(o);
    const fs::path out(c.out);
    fs::create_directories(out);
    save_run_config((out / "config.txt").string(), c);
    const auto ex = load_experiment(c, out);
    std::ofstream log(out / "train.log");
    const auto run = train(c, ex, &log);
    save_checkpoint((out / "model.ckpt").string(), run.model, ex.dataset.provenance_hash);
    if (!run.epochs.empty()) std::cerr << "final loss " << run.epochs.back().mean_loss << '\n';
    std::cout << (out / "model.ckpt").string() << '\n';
    return 0;
}

int cmd_evaluate(const RunOptions& o, const std::string& checkpoint) {
    const auto c = resolve(o);
    const fs::path out(c.out);
    fs::create_directories(out);
    const auto ex = load_experiment(c, out);
    const auto path = checkpoint.empty() ? (out / "model.ckpt").string() : checkpoint;
    const Model model = load_checkpoint(path, ex.coords, ex.dataset.provenance_hash, &c.model);
    const auto test = evaluate(model, ex.split.test);
    std::vector<std::pair<std::string, MetricTable>> rows{{"test", test}};
    if (!ex.split.train.empty()) rows.emplace_back("train", evaluate(model, ex.split.train));
    write_metrics_tsv(std::cout, rows);
    std::ofstream kv(out / "metrics.txt");
    write_metrics_kv(kv, test);
    return 0;
}

int cmd_encode(double lat, double lon, int length, int ngram) {
    const auto g = encode_geohash({lat, lon}, length);
    std::cout << g.str() << '\n';
    if (ngram > 0) {
        const auto seq = ngram_tokenize(g, ngram);
        for (size_t i = 0; i < seq.tokens.size(); ++i)
            std::cout << (i ? " " : "") << ngram_detokenize(seq.tokens[i], ngram);
        std::cout << '\n';
    }
    return 0;
}

int cmd_synth(const SyntheticSpec& spec, std::uint64_t seed, const std::string& output, const std::string& format) {
    const auto ds = generate_synthetic(spec, seed);
    const auto f = format == "epoch" ? TimestampFormat::epoch : TimestampFormat::iso8601;
    if (format != "epoch" && format != "iso8601") throw std::invalid_argument("synth format must be iso8601 or epoch");
    if (output.empty() || output == "-") {
        write_checkins(std::cout, ds, f);
    } else {
        std::ofstream out(output);
        if (!out) throw InputError("cannot write " + output);
        write_checkins(out, ds, f);
    }
    std::cerr << summarize(ds);
    return 0;
}

std::vector<std::pair<std::string, RunConfig>> ablation_variants(const RunConfig& base) {
    std::vector<std::pair<std::string, RunConfig>> v(7, {"", base});
    v[0].first = "PASR";
    v[1].first = "US";
    v[1].second.model.sampler = SamplerKind::uniform;
    v[2].first = "BCE";
    v[2].second.model.weighted_loss = false;
    v[3].first = "-GE";
    v[3].second.model.use_geo_encoder = false;
    v[4].first = "-GM";
    v[4].second.model.use_grid_mapper = false;
    v[5].first = "-GE-GM";
    v[5].second.model.use_geo_encoder = false;
    v[5].second.model.use_grid_mapper = false;
    v[6].first = "-TAAD";
    v[6].second.model.use_target_decoder = false;
    return v;
}

int cmd_ablate(const RunOptions& o) {
    const auto c = resolve(o);
    const fs::path out(c.out);
    fs::create_directories(out);
    save_run_config((out / "config.txt").string(), c);
    const auto base = load_experiment(c, out);
    std::vector<std::pair<std::string, MetricTable>> rows;
    for (const auto& [name, vc] : ablation_variants(c)) {
        std::cerr << "training " << name << '\n';
        const auto ex = prepare_experiment(base.dataset, vc, base.knn);
        const auto run = train(vc, ex);
        rows.emplace_back(name, evaluate(run.model, ex.split.test));
    }
    std::ostringstream table;
    write_metrics_tsv(table, rows);
    write_text(out / "ablation.tsv", table.str());
    std::cout << table.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Next-location recommendation with geography-aware self-attention"};
    app.require_subcommand(1);

    RunOptions ingest_o, train_o, eval_o, ablate_o;
    add_run_options(app.add_subcommand("ingest", "validate and summarize a check-in file"), ingest_o);
    add_run_options(app.add_subcommand("train", "train and write checkpoint, log and resolved config"), train_o);
    auto* eval = app.add_subcommand("evaluate", "rank held-out check-ins and print HR/NDCG");
    add_run_options(eval, eval_o);
    std::string checkpoint;
    eval->add_option("--checkpoint", checkpoint, "default: <out>/model.ckpt");
    add_run_options(app.add_subcommand("ablate", "train and evaluate every ablation variant"), ablate_o);

    auto* enc = app.add_subcommand("encode-geohash", "print the geohash of a coordinate");
    double lat = 0, lon = 0;
    int length = 12, ngram = 0;
    enc->add_option("--lat", lat)->required();
    enc->add_option("--lon", lon)->required();
    enc->add_option("--length", length)->capture_default_str();
    enc->add_option("--ngram", ngram, "also print n-gram tokens");

    auto* syn = app.add_subcommand("synth", "write a planted-pattern synthetic dataset");
    SyntheticSpec spec;
    std::uint64_t synth_seed = 42;
    std::string synth_out, synth_format = "iso8601";
    syn->add_option("--users", spec.users)->capture_default_str();
    syn->add_option("--locations", spec.locations)->capture_default_str();
    syn->add_option("--clusters", spec.clusters)->capture_default_str();
    syn->add_option("--locality", spec.locality)->capture_default_str();
    syn->add_option("--checkins-per-user", spec.checkins_per_user)->capture_default_str();
    syn->add_option("--detour-prob", spec.detour_prob)->capture_default_str();
    syn->add_option("--seed", synth_seed)->capture_default_str();
    syn->add_option("--output,-o", synth_out, "default: stdout");
    syn->add_option("--format", synth_format)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "pasr: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (app.got_subcommand("ingest")) return cmd_ingest(ingest_o);
        if (app.got_subcommand("train")) return cmd_train(train_o);
        if (app.got_subcommand("evaluate")) return cmd_evaluate(eval_o, checkpoint);
        if (app.got_subcommand("ablate")) return cmd_ablate(ablate_o);
        if (app.got_subcommand("encode-geohash")) return cmd_encode(lat, lon, length, ngram);
        if (app.got_subcommand("synth")) return cmd_synth(spec, synth_seed, synth_out, synth_format);
    } catch (const std::invalid_argument& e) {
        std::cerr << "pasr: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "pasr: error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
