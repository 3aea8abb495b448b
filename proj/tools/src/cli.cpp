#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "lcsurv/checkpoint.hpp"
#include "lcsurv/error.hpp"
#include "lcsurv/io.hpp"
#include "lcsurv/preproc.hpp"
#include "png_writer.hpp"

namespace lcsurv::cli {

namespace {

constexpr const char* version_string = "lcsurv 0.1.0";

json read_json(const fs::path& path, bool is_config) {
    if (!fs::exists(path)) {
        if (is_config) throw ConfigError("config file not found: " + path.string());
        throw DataError("file not found: " + path.string());
    }
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        const std::string msg = path.string() + " is not valid JSON: " + e.what();
        if (is_config) throw ConfigError(msg);
        throw DataError(msg);
    }
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::string timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& item : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; })) {
            throw ConfigError("unknown key '" + item.key() + "' in " + where);
        }
    }
}

template <typename T>
void take(const json& j, const char* key, T& dst) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

std::vector<std::size_t> parse_index_list(const std::string& text, const std::string& what) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ArgumentError("cannot parse " + what + " '" + text + "'");
        }
    }
    if (out.empty()) throw ArgumentError("empty " + what);
    return out;
}

char parse_study(const std::string& s) {
    if (s.size() != 1 || s[0] < 'A' || s[0] > 'H') throw ConfigError("study must be one of A-H, got '" + s + "'");
    return s[0];
}

fs::path fold_checkpoint(const fs::path& study_dir, std::size_t fold) {
    return study_dir / ("fold" + std::to_string(fold + 1) + ".ckpt");
}

std::string fixture_hash(const fs::path& fixture) {
    const fs::path manifest = fixture / "manifest.json";
    if (fs::exists(manifest)) return read_json(manifest, false).value("fixture_hash", "");
    return file_hash(fixture / "cohort.json");
}

std::optional<double> optional_metric(const std::function<double()>& f) {
    try {
        return f();
    } catch (const UndefinedError&) {
        return std::nullopt;
    }
}

json to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::configuration:
        case ErrorKind::argument:
        case ErrorKind::dimension: return exit_config;
        case ErrorKind::numeric: return exit_numeric;
        case ErrorKind::data:
        case ErrorKind::io:
        case ErrorKind::state:
        case ErrorKind::undefined: return exit_data;
    }
    return exit_data;
}

// ---------------------------------------------------------------- studies

const std::vector<StudySpec>& all_studies() {
    static const std::vector<StudySpec> studies = [] {
        std::vector<StudySpec> s;
        s.push_back({'A', "A. CNN", false, true, CellKind::lstm, 0, HeadKind::classifier2, 0, false});
        s.push_back({'B', "B. LSTM", true, true, CellKind::lstm, 32, HeadKind::classifier2, 'A', false});
        s.push_back({'C', "C. LSTM (3d reg)", true, false, CellKind::lstm, 32, HeadKind::classifier2, 'A', false});
        s.push_back({'D', "D. TALSTM", true, true, CellKind::talstm, 32, HeadKind::classifier2, 'A', false});
        s.push_back({'E', "E. tLSTM", true, true, CellKind::tlstm, 64, HeadKind::classifier2, 'A', false});
        s.push_back({'F', "F. Cause CRNN", true, true, CellKind::lstm, 32, HeadKind::classifier_cause2, 'A', true});
        s.push_back({'G', "G. CNN", false, true, CellKind::lstm, 0, HeadKind::cox, 0, false});
        s.push_back({'H', "H. CRNN", true, true, CellKind::lstm, 32, HeadKind::cox, 'G', false});
        return s;
    }();
    return studies;
}

const StudySpec& study_spec(char id) {
    for (const auto& s : all_studies()) {
        if (s.id == id) return s;
    }
    throw ConfigError(std::string("unknown study '") + id + "'");
}

// ---------------------------------------------------------------- configs

GeneratorConfig generator_from_json(const json& j, GeneratorConfig c) {
    check_keys(j,
               {"n_subjects", "class_ratio", "baseline", "baseline_rate", "weibull_shape", "true_beta", "censor_rate",
                "max_followup_years", "slope_signal_strength", "observation_noise", "cause_signal", "cardiac_fraction",
                "scan_interval_days", "interval_iqr_days", "n_centres", "internal_centres", "external_noise_scale",
                "external_offset", "mode", "volume_size", "seed"},
               "generator config");
    take(j, "n_subjects", c.n_subjects);
    take(j, "class_ratio", c.class_ratio);
    if (j.contains("baseline")) {
        const std::string b = j.at("baseline").get<std::string>();
        if (b == "exponential") c.baseline = BaselineKind::exponential;
        else if (b == "weibull") c.baseline = BaselineKind::weibull;
        else throw ConfigError("baseline must be exponential or weibull");
    }
    take(j, "baseline_rate", c.baseline_rate);
    take(j, "weibull_shape", c.weibull_shape);
    take(j, "true_beta", c.true_beta);
    take(j, "censor_rate", c.censor_rate);
    take(j, "max_followup_years", c.max_followup_years);
    take(j, "slope_signal_strength", c.slope_signal_strength);
    take(j, "observation_noise", c.observation_noise);
    take(j, "cause_signal", c.cause_signal);
    take(j, "cardiac_fraction", c.cardiac_fraction);
    take(j, "scan_interval_days", c.scan_interval_days);
    take(j, "interval_iqr_days", c.interval_iqr_days);
    take(j, "n_centres", c.n_centres);
    take(j, "internal_centres", c.internal_centres);
    take(j, "external_noise_scale", c.external_noise_scale);
    take(j, "external_offset", c.external_offset);
    if (j.contains("mode")) c.mode = parse_input_mode(j.at("mode").get<std::string>());
    take(j, "volume_size", c.volume_size);
    take(j, "seed", c.seed);
    return c;
}

json generator_to_json(const GeneratorConfig& c) {
    return json{{"n_subjects", c.n_subjects},
                {"class_ratio", c.class_ratio},
                {"baseline", c.baseline == BaselineKind::exponential ? "exponential" : "weibull"},
                {"baseline_rate", c.baseline_rate},
                {"weibull_shape", c.weibull_shape},
                {"true_beta", c.true_beta},
                {"censor_rate", c.censor_rate},
                {"max_followup_years", c.max_followup_years},
                {"slope_signal_strength", c.slope_signal_strength},
                {"observation_noise", c.observation_noise},
                {"cause_signal", c.cause_signal},
                {"cardiac_fraction", c.cardiac_fraction},
                {"scan_interval_days", c.scan_interval_days},
                {"interval_iqr_days", c.interval_iqr_days},
                {"n_centres", c.n_centres},
                {"internal_centres", c.internal_centres},
                {"external_noise_scale", c.external_noise_scale},
                {"external_offset", c.external_offset},
                {"mode", to_string(c.mode)},
                {"volume_size", c.volume_size},
                {"seed", c.seed}};
}

RunConfig RunConfig::from_json(const json& j) {
    check_keys(j, {"fixture", "study", "seed", "epochs", "output", "model", "optim", "folds", "retrain_cnn", "generator", "preprocess"},
               "run config");
    RunConfig c;
    if (j.contains("fixture")) c.fixture = j.at("fixture").get<std::string>();
    if (j.contains("study")) c.study = parse_study(j.at("study").get<std::string>());
    take(j, "seed", c.seed);
    take(j, "epochs", c.epochs);
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    take(j, "retrain_cnn", c.retrain_cnn);
    if (j.contains("folds")) {
        c.folds = j.at("folds").get<std::vector<std::size_t>>();
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"width", "stem_channels", "backbone_channels", "fc_dims", "rnn_hx", "dropout_fc", "dropout_rnn"},
                   "model config");
        take(m, "width", c.model.width);
        take(m, "stem_channels", c.model.stem_channels);
        take(m, "backbone_channels", c.model.backbone_channels);
        take(m, "fc_dims", c.model.fc_dims);
        if (m.contains("rnn_hx")) c.model.rnn_hx = m.at("rnn_hx").get<std::size_t>();
        else c.model.rnn_hx = 0;
        take(m, "dropout_fc", c.model.dropout_fc);
        take(m, "dropout_rnn", c.model.dropout_rnn);
    } else {
        c.model.rnn_hx = 0;
    }
    if (j.contains("optim")) {
        const json& o = j.at("optim");
        check_keys(o, {"lr_init", "lr_low", "lr_high", "momentum", "weight_decay", "batch_size", "sam_rho", "adaptive_sam",
                       "use_sam", "half_period", "steps_per_epoch"},
                   "optim config");
        take(o, "lr_init", c.optim.lr_init);
        if (o.contains("lr_low")) c.optim.lr_low = o.at("lr_low").get<double>();
        if (o.contains("lr_high")) c.optim.lr_high = o.at("lr_high").get<double>();
        take(o, "momentum", c.optim.momentum);
        take(o, "weight_decay", c.optim.weight_decay);
        take(o, "batch_size", c.optim.batch_size);
        take(o, "sam_rho", c.optim.sam_rho);
        take(o, "adaptive_sam", c.optim.adaptive_sam);
        take(o, "use_sam", c.use_sam);
        take(o, "half_period", c.optim.half_period);
        take(o, "steps_per_epoch", c.steps_per_epoch);
    }
    return c;
}

json RunConfig::to_json() const {
    json optim{{"lr_init", this->optim.lr_init},
               {"momentum", this->optim.momentum},
               {"weight_decay", this->optim.weight_decay},
               {"batch_size", this->optim.batch_size},
               {"sam_rho", this->optim.sam_rho},
               {"adaptive_sam", this->optim.adaptive_sam},
               {"use_sam", use_sam},
               {"half_period", this->optim.half_period},
               {"steps_per_epoch", steps_per_epoch}};
    if (this->optim.lr_low) optim["lr_low"] = *this->optim.lr_low;
    if (this->optim.lr_high) optim["lr_high"] = *this->optim.lr_high;
    json model_j{{"width", model.width},
                 {"stem_channels", model.stem_channels},
                 {"backbone_channels", model.backbone_channels},
                 {"fc_dims", model.fc_dims},
                 {"dropout_fc", model.dropout_fc},
                 {"dropout_rnn", model.dropout_rnn}};
    if (model.rnn_hx > 0) model_j["rnn_hx"] = model.rnn_hx;
    return json{{"fixture", fixture.string()}, {"study", std::string(1, study)}, {"seed", seed},
                {"epochs", epochs},           {"output", output.string()},       {"model", model_j},
                {"optim", optim},             {"folds", folds},                  {"retrain_cnn", retrain_cnn}};
}

fs::path output_root(const fs::path& requested) {
    if (requested.is_absolute()) return requested;
    if (const char* root = std::getenv("LCSURV_OUTPUT_ROOT"); root && *root) return fs::path(root) / requested;
    return requested;
}

ModelConfig study_model_config(const RunConfig& cfg, const StudySpec& spec, const Cohort& cohort) {
    ModelConfig m = cfg.model;
    m.input = cohort.config.mode;
    m.input_shape = cohort.item_shape();
    m.head = spec.head;
    m.rnn_kind = spec.rnn_kind;
    // An explicit hidden size in the config overrides the study default.
    m.rnn_hx = cfg.model.rnn_hx > 0 ? cfg.model.rnn_hx : std::max<std::size_t>(spec.rnn_hx, 1);
    m.validate();
    return m;
}

// ---------------------------------------------------------------- data

std::vector<std::size_t> study_members(const Cohort& cohort, const StudySpec& spec, SplitTag tag) {
    return cohort.indices_where([&](const SubjectRecord& s) {
        return s.split == tag && (!spec.non_survivors_only || s.label.event == 1);
    });
}

std::vector<std::size_t> training_members(const Cohort& cohort, const StudySpec& spec, std::size_t fold) {
    const SplitTag val = fold_tag(fold);
    return cohort.indices_where([&](const SubjectRecord& s) {
        return static_cast<int>(s.split) < static_cast<int>(fold_count) && s.split != val &&
               (!spec.non_survivors_only || s.label.event == 1);
    });
}

namespace {

void add_targets(TaskData& d, const StudySpec& spec, const SubjectRecord& s) {
    if (spec.head == HeadKind::classifier_cause2) d.classes.push_back(s.cause == Cause::respiratory ? 1 : 0);
    else d.classes.push_back(s.label.event);
    d.labels.push_back(s.label);
}

}  // namespace

TaskData item_task(const Cohort& cohort, const StudySpec& spec, const std::vector<std::size_t>& members) {
    TaskData d;
    for (std::size_t i : members) {
        const auto& s = cohort.subjects[i];
        d.items.push_back(s.timepoints.back());
        add_targets(d, spec, s);
    }
    return d;
}

TaskData sequence_task(const Cohort& cohort, const StudySpec& spec, const std::vector<std::size_t>& members,
                       CrnnModel& model) {
    TaskData d;
    for (std::size_t i : members) {
        const auto& s = cohort.subjects[i];
        const auto deltas = s.deltas();
        d.sequences.push_back(model.encode(s.timepoints, deltas));
        add_targets(d, spec, s);
    }
    return d;
}

// ---------------------------------------------------------------- metrics

MeanSd mean_sd(const std::vector<std::optional<double>>& values) {
    std::vector<double> v;
    for (const auto& x : values) {
        if (x) v.push_back(*x);
    }
    MeanSd out;
    if (v.empty()) return out;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    out.mean = mean;
    if (v.size() == fold_count) {
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        out.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return out;
}

json split_metrics(HeadKind head, const std::vector<double>& scores, const TaskData& data) {
    json m;
    m["n"] = scores.size();
    if (head == HeadKind::cox) {
        std::size_t events = 0;
        for (const auto& l : data.labels) events += static_cast<std::size_t>(l.event);
        m["events"] = events;
        m["harrell_c"] = to_json(optional_metric([&] { return harrell_c(scores, data.labels); }));
        m["ipcw_c"] = to_json(optional_metric([&] { return ipcw_c(scores, data.labels); }));
        return m;
    }
    std::size_t positives = 0;
    for (int c : data.classes) positives += static_cast<std::size_t>(c);
    m["positives"] = positives;
    m["auc"] = to_json(optional_metric([&] { return roc_auc(scores, data.classes); }));
    const Confusion conf = confusion_at(scores, data.classes, 0.5);
    const auto fm = optional_metric([&] { return f1_mcc(conf).f1; });
    m["f1"] = to_json(fm);
    m["mcc"] = to_json(optional_metric([&] { return f1_mcc(conf).mcc; }));
    m["confusion"] = {{"tp", conf.tp}, {"fp", conf.fp}, {"tn", conf.tn}, {"fn", conf.fn}};
    return m;
}

std::string report_hash(const json& report) {
    json copy = report;
    copy.erase("volatile");
    return hex64(fnv1a64(copy.dump()));
}

// ---------------------------------------------------------------- inference

namespace {

struct LoadedModel {
    std::optional<CnnModel> cnn;
    std::optional<CrnnModel> crnn;
};

LoadedModel load_model(const fs::path& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    LoadedModel m;
    if (is_crnn_checkpoint(ckpt)) m.crnn = crnn_from_checkpoint(ckpt);
    else m.cnn = cnn_from_checkpoint(ckpt);
    return m;
}

std::vector<double> model_scores(LoadedModel& m, const Cohort& cohort, const StudySpec& spec,
                                 const std::vector<std::size_t>& members) {
    if (m.crnn) {
        const TaskData d = sequence_task(cohort, spec, members, *m.crnn);
        return predict(*m.crnn, d.sequences);
    }
    const TaskData d = item_task(cohort, spec, members);
    return predict(*m.cnn, d.items);
}

}  // namespace

std::vector<std::vector<double>> fold_scores(const fs::path& study_dir, const Cohort& cohort,
                                             const std::vector<std::size_t>& members, const StudySpec& spec,
                                             std::vector<std::size_t>* folds_found) {
    std::vector<std::vector<double>> out;
    for (std::size_t k = 0; k < fold_count; ++k) {
        const fs::path p = fold_checkpoint(study_dir, k);
        if (!fs::exists(p)) continue;
        LoadedModel m = load_model(p);
        out.push_back(model_scores(m, cohort, spec, members));
        if (folds_found) folds_found->push_back(k);
    }
    if (out.empty()) throw StateError("no fold checkpoints under " + study_dir.string() + "; run train first");
    return out;
}

std::vector<MortalityClass> two_step_predictions(const std::vector<double>& mortality_prob,
                                                 const std::vector<double>& respiratory_prob) {
    if (mortality_prob.size() != respiratory_prob.size()) throw DimensionError("two-step inputs differ in length");
    std::vector<MortalityClass> out;
    for (std::size_t i = 0; i < mortality_prob.size(); ++i) {
        out.push_back(two_step_classify(mortality_prob[i], {1.0 - respiratory_prob[i], respiratory_prob[i]}));
    }
    return out;
}

std::vector<BandConfusion> compute_bands(const Cohort& cohort, const std::vector<MortalityClass>& predicted) {
    std::vector<SurvivalLabel> labels;
    std::vector<Cause> causes;
    for (const auto& s : cohort.subjects) {
        labels.push_back(s.label);
        causes.push_back(s.cause);
    }
    std::vector<BandConfusion> out;
    for (double years : {3.0, 7.0, 11.0}) out.push_back(band_confusion(predicted, labels, causes, years));
    return out;
}

std::string bands_csv(const std::vector<BandConfusion>& bands) {
    static const char* names[] = {"Survivor", "NS(Cardiac)", "NS(Respiratory)"};
    static const char* band_names[] = {"a", "b", "c"};
    std::ostringstream out;
    out << "Class";
    for (std::size_t b = 0; b < bands.size(); ++b) {
        char years[16];
        std::snprintf(years, sizeof years, "%.1f", bands[b].band_years);
        const std::string tag = std::string("band_") + band_names[b % 3] + "(<" + years + "y)";
        out << ',' << tag << "_cases," << tag << "_sensitivity," << tag << "_specificity";
    }
    out << '\n';
    auto fmt = [](const std::optional<double>& v) {
        if (!v) return std::string("NA");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", *v);
        return std::string(buf);
    };
    for (std::size_t c = 0; c < 3; ++c) {
        out << names[c];
        for (const auto& b : bands) {
            const auto& st = b.classes[c];
            out << ',' << st.cases << ',' << fmt(st.sensitivity) << ',' << fmt(st.specificity);
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------- subcommands

namespace {

void cmd_generate(const std::optional<fs::path>& config, const fs::path& out_arg, bool force,
                  const std::map<std::string, std::string>& overrides, std::optional<std::uint64_t> split_seed) {
    GeneratorConfig g;
    if (config) {
        const json j = read_json(*config, true);
        if (j.contains("generator")) g = generator_from_json(j.at("generator"));
        else g = generator_from_json(j);
    }
    json o = json::object();
    for (const auto& [k, v] : overrides) {
        if (k == "mode") o[k] = v;
        else o[k] = json::parse(v);
    }
    g = generator_from_json(o, g);
    const fs::path out = output_root(out_arg);
    if (fs::exists(out) && !fs::is_empty(out) && !force) {
        throw ArgumentError("output " + out.string() + " already exists; pass --force to overwrite");
    }
    Cohort cohort = simulate_cohort(g);
    assign_splits(cohort, split_seed.value_or(g.seed));
    save_cohort(out, cohort);
    json files = json::object();
    std::string combined;
    for (const char* name : {"cohort.json", "timepoints.f32"}) {
        const std::string h = file_hash(out / name);
        files[name] = h;
        combined += h;
    }
    const std::string fixture = hex64(fnv1a64(combined));
    write_json(out / "manifest.json", json{{"files", files}, {"fixture_hash", fixture}, {"generator", generator_to_json(g)}});
    std::size_t events = 0;
    for (const auto& s : cohort.subjects) events += static_cast<std::size_t>(s.label.event);
    std::cout << "fixture " << out.string() << ": " << cohort.subjects.size() << " subjects, " << events
              << " non-survivors, oracle C " << cohort.oracle_c_index << ", hash " << fixture << '\n';
}

Shape parse_shape(const std::string& text) {
    const auto v = parse_index_list(text, "shape");
    if (v.size() != 3) throw ArgumentError("shape needs three comma-separated extents, got '" + text + "'");
    return Shape(v.begin(), v.end());
}

void cmd_preprocess(const std::optional<fs::path>& config, const std::optional<fs::path>& input, bool phantom,
                    const fs::path& out_arg, const std::vector<std::string>& stages, const std::optional<std::string>& target,
                    std::optional<double> sigma) {
    PreprocConfig pc;
    if (config) {
        const json j = read_json(*config, true);
        const json p = j.contains("preprocess") ? j.at("preprocess") : j;
        check_keys(p, {"sigma_voxels", "threshold_hu", "min_litres", "max_litres", "max_center_fraction", "window_low",
                       "window_high", "fill", "target"},
                   "preprocess config");
        take(p, "sigma_voxels", pc.sigma_voxels);
        take(p, "threshold_hu", pc.threshold_hu);
        take(p, "min_litres", pc.filter.min_litres);
        take(p, "max_litres", pc.filter.max_litres);
        take(p, "max_center_fraction", pc.filter.max_center_fraction);
        take(p, "window_low", pc.window.low);
        take(p, "window_high", pc.window.high);
        take(p, "fill", pc.window.fill);
        take(p, "target", pc.target);
    }
    if (target) pc.target = parse_shape(*target);
    if (sigma) pc.sigma_voxels = *sigma;
    for (const auto& s : stages) {
        const auto& known = pipeline_stages();
        if (std::find(known.begin(), known.end(), s) == known.end()) {
            throw ArgumentError("unknown stage '" + s + "'; expected binarize, filter, close or complete");
        }
    }
    if (phantom == input.has_value()) throw ArgumentError("pass exactly one of --input or --phantom");

    const fs::path out = output_root(out_arg);
    fs::create_directories(out);
    CtVolume volume;
    std::optional<ThoraxPhantom> ph;
    if (phantom) {
        ph = make_thorax_phantom();
        volume = ph->volume;
        save_ct_volume(out / "phantom_hu", volume);
    } else {
        volume = load_ct_volume(*input);
    }
    const StageSink sink = [&](const std::string& stage, const LungMask& m) {
        if (std::find(stages.begin(), stages.end(), stage) != stages.end()) save_mask(out / ("stage_" + stage), m);
    };
    json diag = json::array();
    PreprocResult r;
    try {
        r = preprocess_pipeline(volume, pc, sink);
    } catch (const DataError&) {
        throw;
    }
    for (const auto& d : r.diagnostics) diag.push_back({{"stage", d.stage}, {"components", d.components}, {"mask_litres", d.mask_litres}});
    ByteVolume bytes{r.volume.shape(), std::vector<std::uint8_t>(r.volume.size())};
    for (std::size_t i = 0; i < bytes.data.size(); ++i) {
        bytes.data[i] = static_cast<std::uint8_t>(std::clamp(std::round(r.volume[i]), 0.0, 255.0));
    }
    save_byte_volume(out / "volume", bytes);
    save_mask(out / "mask", r.mask);
    json summary{{"stages", diag},
                 {"output_shape", r.volume.shape()},
                 {"volume_hash", hex64(fnv1a64(std::string(bytes.data.begin(), bytes.data.end())))}};
    if (ph) summary["mask_iou_vs_reference"] = mask_iou(r.mask, ph->reference);
    write_json(out / "diagnostics.json", summary);
    std::cout << "preprocessed volume " << shape_string(r.volume.shape()) << " -> " << out.string() << '\n';
}

struct TrainArgs {
    std::optional<fs::path> config;
    std::optional<std::string> study, folds;
    std::optional<fs::path> fixture, out;
    std::optional<std::size_t> epochs, batch_size, steps_per_epoch, hx;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr, width;
    bool no_sam = false;
    bool retrain_cnn = false;
};

RunConfig resolve_run_config(const TrainArgs& a) {
    RunConfig c;
    if (a.config) c = RunConfig::from_json(read_json(*a.config, true));
    if (a.study) c.study = parse_study(*a.study);
    if (a.fixture) c.fixture = *a.fixture;
    if (a.out) c.output = *a.out;
    if (a.epochs) c.epochs = *a.epochs;
    if (a.seed) c.seed = *a.seed;
    if (a.lr) c.optim.lr_init = *a.lr;
    if (a.batch_size) c.optim.batch_size = *a.batch_size;
    if (a.steps_per_epoch) c.steps_per_epoch = *a.steps_per_epoch;
    if (a.width) c.model.width = *a.width;
    if (a.hx) c.model.rnn_hx = *a.hx;
    if (a.no_sam) c.use_sam = false;
    if (a.retrain_cnn) c.retrain_cnn = true;
    if (a.folds) c.folds = parse_index_list(*a.folds, "fold list");
    for (std::size_t f : c.folds) {
        if (f >= fold_count) throw ConfigError("fold index " + std::to_string(f) + " out of range 0-4");
    }
    if (c.fixture.empty()) throw ConfigError("no fixture given (config key 'fixture' or --fixture)");
    c.optim.validate();
    return c;
}

TrainConfig train_config(const RunConfig& c, std::size_t fold) {
    TrainConfig t;
    t.optim = c.optim;
    t.epochs = c.epochs;
    t.seed = c.seed + fold;
    t.use_sam = c.use_sam;
    t.steps_per_epoch = c.steps_per_epoch;
    return t;
}

json model_card(const RunConfig& c, const StudySpec& spec, std::size_t fold, const ModelConfig& m,
                const std::string& fixture, const TrainResult& r, const fs::path& ckpt) {
    return json{{"study", std::string(1, spec.id)},
                {"label", spec.label},
                {"fold", fold + 1},
                {"seed", c.seed + fold},
                {"model", json::parse(m.to_json())},
                {"run_config", c.to_json()},
                {"fixture_hash", fixture},
                {"best_epoch", r.best_epoch},
                {"best_validation", to_json(r.best_metric)},
                {"validation_metric", r.metric_name},
                {"zero_event_resamples", r.zero_event_resamples},
                {"checkpoint", ckpt.filename().string()},
                {"checkpoint_hash", file_hash(ckpt)},
                {"pretrained_weights", "none (He-normal convolution/dense, orthogonal recurrent initialization)"},
                {"version", version_string}};
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold, std::uint64_t salt) {
    return fnv1a64(std::to_string(seed) + ":" + std::to_string(fold) + ":" + std::to_string(salt));
}

void write_train_logs(const fs::path& dir, const std::string& stem, const TrainResult& r) {
    write_file(dir / (stem + "_steps.csv"), steps_csv(r));
    write_file(dir / (stem + "_epochs.csv"), epochs_csv(r));
}

void cmd_train(const TrainArgs& args) {
    const RunConfig c = resolve_run_config(args);
    const StudySpec& spec = study_spec(c.study);
    if (!spec.in_scope) throw ConfigError("study C is out of scope (registration)");
    const Cohort cohort = load_cohort(c.fixture);
    const std::string fixture = fixture_hash(c.fixture);
    const fs::path root = output_root(c.output);
    const fs::path dir = root / std::string(1, spec.id);
    fs::create_directories(dir);
    write_json(dir / "run_config.json", c.to_json());
    const ModelConfig mc = study_model_config(c, spec, cohort);

    for (std::size_t fold : c.folds) {
        const TrainConfig tc = train_config(c, fold);
        const auto train_idx = training_members(cohort, spec, fold);
        const auto val_idx = study_members(cohort, spec, fold_tag(fold));
        const std::string stem = "fold" + std::to_string(fold + 1);
        const fs::path ckpt_path = fold_checkpoint(dir, fold);
        TrainResult result;
        if (!spec.crnn) {
            Rng rng(fold_seed(c.seed, fold, 1));
            CnnModel model(mc);
            model.init(rng);
            result = train_cnn(model, item_task(cohort, spec, train_idx), item_task(cohort, spec, val_idx), tc);
            save_checkpoint(ckpt_path, to_checkpoint(model, json{{"study", std::string(1, spec.id)}, {"fold", fold + 1}}.dump()));
        } else {
            CnnModel encoder;
            if (c.retrain_cnn) {
                ModelConfig enc_cfg = mc;
                Rng rng(fold_seed(c.seed, fold, 2));
                encoder = CnnModel(enc_cfg);
                encoder.init(rng);
                const TrainResult enc = train_cnn(encoder, item_task(cohort, spec, train_idx), item_task(cohort, spec, val_idx), tc);
                const fs::path enc_path = dir / (stem + "_cnn.ckpt");
                save_checkpoint(enc_path, to_checkpoint(encoder, json{{"study", std::string(1, spec.id)}, {"fold", fold + 1}}.dump()));
                write_train_logs(dir, stem + "_cnn", enc);
            } else {
                const fs::path cnn_path = fold_checkpoint(root / std::string(1, spec.cnn_study), fold);
                if (!fs::exists(cnn_path)) {
                    throw StateError(std::string("study ") + spec.id + " needs the CNN checkpoint " + cnn_path.string() +
                                     "; train study " + spec.cnn_study + " first");
                }
                encoder = cnn_from_checkpoint(load_checkpoint(cnn_path));
            }
            ModelConfig crnn_cfg = mc;
            // The encoder may carry a different head; only its feature shape matters.
            crnn_cfg.fc_dims = encoder.config().fc_dims;
            crnn_cfg.width = encoder.config().width;
            Rng rng(fold_seed(c.seed, fold, 3));
            CrnnModel model(crnn_cfg);
            model.init(rng);
            model.set_encoder(std::move(encoder));
            const TaskData train = sequence_task(cohort, spec, train_idx, model);
            const TaskData val = sequence_task(cohort, spec, val_idx, model);
            result = train_crnn(model, train, val, tc);
            save_checkpoint(ckpt_path, to_checkpoint(model, json{{"study", std::string(1, spec.id)}, {"fold", fold + 1}}.dump()));
        }
        write_train_logs(dir, stem, result);
        write_json(dir / (stem + "_card.json"), model_card(c, spec, fold, mc, fixture, result, ckpt_path));
        std::cout << "study " << spec.id << " fold " << fold + 1 << ": best epoch " << result.best_epoch << ", validation "
                  << result.metric_name << ' ';
        if (result.best_metric) std::cout << *result.best_metric;
        else std::cout << "n/a";
        if (result.zero_event_resamples > 0) std::cout << ", " << result.zero_event_resamples << " zero-event batches resampled";
        std::cout << '\n';
    }
}

std::string roc_rows(const std::string& split, std::size_t fold, const std::vector<double>& scores, const std::vector<int>& labels) {
    std::ostringstream out;
    out.precision(17);
    try {
        for (const auto& p : roc_curve(scores, labels)) {
            out << split << ',' << fold << ',' << p.fpr << ',' << p.tpr << ',';
            if (std::isinf(p.threshold)) out << "inf";
            else out << p.threshold;
            out << '\n';
        }
    } catch (const UndefinedError&) {
    }
    return out.str();
}

SplitTag parse_eval_split(const std::string& s) {
    if (s == "internal_test" || s == "external_test") return parse_split_tag(s);
    if (s.rfind("fold", 0) == 0) return parse_split_tag(s);
    throw ArgumentError("unknown split '" + s + "'");
}

json summarize(const json& folds, const std::string& split, const std::vector<std::string>& keys) {
    json s;
    for (const auto& key : keys) {
        std::vector<std::optional<double>> values;
        for (const auto& f : folds) {
            if (!f.contains(split)) continue;
            const json& v = f.at(split).at(key);
            values.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
        }
        const MeanSd ms = mean_sd(values);
        s[key] = {{"mean", to_json(ms.mean)}, {"sd", to_json(ms.sd)}};
    }
    return s;
}

void cmd_evaluate(const fs::path& run_arg, const std::string& study_s, const fs::path& fixture_path,
                  const std::optional<fs::path>& out_arg, const std::optional<std::string>& split_s,
                  const std::optional<fs::path>& scores_file) {
    const StudySpec& spec = study_spec(parse_study(study_s));
    if (!spec.in_scope) throw ConfigError("study C is out of scope (registration)");
    const Cohort cohort = load_cohort(fixture_path);
    const fs::path run = output_root(run_arg);
    const fs::path dir = run / std::string(1, spec.id);
    const fs::path out = out_arg ? output_root(*out_arg) : dir / "report.json";
    const bool cox = spec.head == HeadKind::cox;
    const std::vector<std::string> keys = cox ? std::vector<std::string>{"harrell_c", "ipcw_c"}
                                              : std::vector<std::string>{"auc", "f1", "mcc"};
    json report{{"study", std::string(1, spec.id)},
                {"label", spec.label},
                {"head", to_string(spec.head)},
                {"threshold", 0.5},
                {"provenance", {{"fixture_hash", fixture_hash(fixture_path)}, {"version", version_string}}},
                {"volatile", {{"generated_at", timestamp()}}}};
    std::string roc = "split,fold,fpr,tpr,threshold\n";

    if (scores_file) {
        const SplitTag tag = parse_eval_split(split_s.value_or("internal_test"));
        const auto members = study_members(cohort, spec, tag);
        if (members.empty()) throw ArgumentError("split " + to_string(tag) + " has no subjects in this fixture");
        std::map<std::uint32_t, double> by_id;
        std::istringstream in(read_file(*scores_file));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) throw DataError("score file rows must be 'id,score'");
            try {
                by_id[static_cast<std::uint32_t>(std::stoul(line.substr(0, comma)))] = std::stod(line.substr(comma + 1));
            } catch (const std::exception&) {
                throw DataError("cannot parse score row '" + line + "'");
            }
        }
        std::vector<double> scores;
        for (std::size_t i : members) {
            const auto it = by_id.find(cohort.subjects[i].id);
            if (it == by_id.end()) throw DataError("score file has no entry for subject " + std::to_string(cohort.subjects[i].id));
            scores.push_back(it->second);
        }
        const TaskData d = item_task(cohort, spec, members);
        report["scores_file"] = scores_file->filename().string();
        report["split"] = to_string(tag);
        report["metrics"] = split_metrics(spec.head, scores, d);
        if (!cox) roc += roc_rows(to_string(tag), 0, scores, d.classes);
    } else {
        std::vector<std::pair<std::string, SplitTag>> splits{{"internal_test", SplitTag::internal_test},
                                                             {"external", SplitTag::external_test}};
        if (split_s && *split_s != "all" && *split_s != "cv") {
            const SplitTag tag = parse_eval_split(*split_s);
            if (study_members(cohort, spec, tag).empty()) throw ArgumentError("split " + *split_s + " has no subjects in this fixture");
            splits = {{to_string(tag), tag}};
        }
        json folds = json::array();
        for (std::size_t k = 0; k < fold_count; ++k) {
            const fs::path p = fold_checkpoint(dir, k);
            if (!fs::exists(p)) continue;
            LoadedModel m = load_model(p);
            json f{{"fold", k + 1}};
            auto eval_split = [&](const std::string& name, const std::vector<std::size_t>& members) {
                if (members.empty()) return;
                const TaskData d = item_task(cohort, spec, members);
                const auto scores = model_scores(m, cohort, spec, members);
                f[name] = split_metrics(spec.head, scores, d);
                if (!cox) roc += roc_rows(name, k + 1, scores, d.classes);
            };
            if (!split_s || *split_s == "all" || *split_s == "cv") eval_split("cv", study_members(cohort, spec, fold_tag(k)));
            if (!split_s || *split_s != "cv") {
                for (const auto& [name, tag] : splits) eval_split(name, study_members(cohort, spec, tag));
            }
            folds.push_back(f);
        }
        if (folds.empty()) throw StateError("no fold checkpoints under " + dir.string() + "; run train first");
        report["folds"] = folds;
        json summary;
        for (const char* split : {"cv", "internal_test", "external"}) {
            if (std::any_of(folds.begin(), folds.end(), [&](const json& f) { return f.contains(split); })) {
                summary[split] = summarize(folds, split, keys);
            }
        }
        report["summary"] = summary;
    }
    report["report_hash"] = report_hash(report);
    write_json(out, report);
    if (!cox) {
        fs::path roc_path = out;
        roc_path.replace_extension("");
        write_file(roc_path.string() + "_roc.csv", roc);
    }
    std::cout << "report " << out.string() << " (" << report["report_hash"].get<std::string>() << ")\n";
}

std::vector<double> ensemble_mean(const std::vector<std::vector<double>>& per_fold) {
    std::vector<double> mean(per_fold.front().size(), 0.0);
    for (const auto& f : per_fold) {
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += f[i];
    }
    for (auto& v : mean) v /= static_cast<double>(per_fold.size());
    return mean;
}

void cmd_bands(const fs::path& run_arg, const fs::path& fixture_path, const std::optional<fs::path>& out_arg,
               const std::string& main_study, const std::string& cause_study) {
    const StudySpec& main_spec = study_spec(parse_study(main_study));
    const StudySpec& cause_spec = study_spec(parse_study(cause_study));
    if (main_spec.head != HeadKind::classifier2) throw ConfigError("band analysis needs a mortality classifier as the main model");
    if (cause_spec.head != HeadKind::classifier_cause2) throw ConfigError("band analysis needs a cause classifier as the second model");
    const Cohort cohort = load_cohort(fixture_path);
    const fs::path run = output_root(run_arg);
    std::vector<std::size_t> all(cohort.subjects.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> main_folds, cause_folds;
    const auto mortality = ensemble_mean(fold_scores(run / std::string(1, main_spec.id), cohort, all, main_spec, &main_folds));
    const auto respiratory = ensemble_mean(fold_scores(run / std::string(1, cause_spec.id), cohort, all, cause_spec, &cause_folds));
    const auto predicted = two_step_predictions(mortality, respiratory);
    const auto bands = compute_bands(cohort, predicted);
    const fs::path out = out_arg ? output_root(*out_arg) : run / "bands.csv";
    write_file(out, bands_csv(bands));
    std::ostringstream pred;
    pred << "id,mortality_prob,respiratory_prob,predicted\n";
    pred.precision(17);
    for (std::size_t i = 0; i < all.size(); ++i) {
        pred << cohort.subjects[i].id << ',' << mortality[i] << ',' << respiratory[i] << ',' << static_cast<int>(predicted[i]) << '\n';
    }
    fs::path pred_path = out;
    pred_path.replace_extension("");
    write_file(pred_path.string() + "_predictions.csv", pred.str());
    std::cout << "bands " << out.string() << " (ensemble of " << main_folds.size() << " + " << cause_folds.size()
              << " fold models)\n";
}

std::vector<std::uint8_t> slice_bytes(const Tensor& vol, std::size_t z, bool normalize) {
    const std::size_t H = vol.dim(vol.rank() - 2), W = vol.dim(vol.rank() - 1);
    const double* p = vol.data() + z * H * W;
    double lo = 0.0, hi = 1.0;
    if (normalize) {
        lo = *std::min_element(vol.raw().begin(), vol.raw().end());
        hi = *std::max_element(vol.raw().begin(), vol.raw().end());
        if (hi <= lo) hi = lo + 1.0;
    }
    std::vector<std::uint8_t> out(H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
        out[i] = static_cast<std::uint8_t>(std::clamp(std::round((p[i] - lo) / (hi - lo) * 255.0), 0.0, 255.0));
    }
    return out;
}

void save_f32_volume(const fs::path& stem, const Tensor& t) {
    std::string blob;
    for (double v : t.values()) put_f32(blob, static_cast<float>(v));
    write_json(fs::path(stem.string() + ".json"),
               json{{"shape", t.shape()}, {"dtype", "float32"}, {"byte_order", "little"}, {"blob", stem.filename().string() + ".f32"}});
    write_file(fs::path(stem.string() + ".f32"), blob);
}

void cmd_gradcam(const fs::path& run_arg, const std::string& study_s, std::size_t fold, const fs::path& fixture_path,
                 std::uint32_t subject, const fs::path& out_arg, std::optional<std::size_t> slice, std::size_t target_class) {
    const StudySpec& spec = study_spec(parse_study(study_s));
    const Cohort cohort = load_cohort(fixture_path);
    if (cohort.config.mode != InputMode::volumes) {
        throw ConfigError("gradcam needs a volume fixture; feature fixtures have no spatial activations");
    }
    const SubjectRecord* s = nullptr;
    for (const auto& r : cohort.subjects) {
        if (r.id == subject) s = &r;
    }
    if (!s) throw ArgumentError("unknown subject id " + std::to_string(subject));
    if (fold >= fold_count) throw ArgumentError("fold must be 0-4");
    const fs::path ckpt = fold_checkpoint(output_root(run_arg) / std::string(1, spec.id), fold);
    LoadedModel m = load_model(ckpt);
    std::vector<GradcamResult> maps;
    if (m.crnn) {
        const auto deltas = s->deltas();
        maps = gradcam(*m.crnn, s->timepoints, deltas, target_class);
    } else {
        for (const auto& t : s->timepoints) maps.push_back(gradcam(*m.cnn, t, target_class));
    }
    const fs::path out = output_root(out_arg);
    fs::create_directories(out);
    json meta = json::array();
    for (std::size_t t = 0; t < maps.size(); ++t) {
        const Tensor& h = maps[t].heatmap;
        const std::size_t z = slice.value_or(h.dim(0) / 2);
        if (z >= h.dim(0)) throw ArgumentError("slice index " + std::to_string(z) + " outside the volume");
        const std::string stem = "heatmap_t" + std::to_string(t);
        save_f32_volume(out / stem, h);
        write_png_gray(out / (stem + "_slice.png"), h.dim(2), h.dim(1), slice_bytes(h, z, false));
        write_png_gray(out / ("volume_t" + std::to_string(t) + "_slice.png"), h.dim(2), h.dim(1),
                       slice_bytes(s->timepoints[t].reshaped({h.dim(0), h.dim(1), h.dim(2)}), z, true));
        meta.push_back({{"timepoint", t}, {"slice", z}, {"zero_gradient", maps[t].zero_gradient}});
        if (maps[t].zero_gradient) std::cerr << "warning: zero gradient at timepoint " << t << "; heatmap is all zero\n";
    }
    write_json(out / "gradcam.json", json{{"study", std::string(1, spec.id)}, {"fold", fold + 1}, {"subject", subject}, {"maps", meta}});
    std::cout << "wrote " << maps.size() << " heatmaps to " << out.string() << '\n';
}

std::string cell(const json& summary, const std::string& split, const std::string& key) {
    if (!summary.contains(split) || !summary.at(split).contains(key)) return "-";
    const json& v = summary.at(split).at(key);
    if (v.at("mean").is_null()) return "NA";
    char buf[48];
    if (v.at("sd").is_null()) std::snprintf(buf, sizeof buf, "%.3f", v.at("mean").get<double>());
    else std::snprintf(buf, sizeof buf, "%.3f (%.3f)", v.at("mean").get<double>(), v.at("sd").get<double>());
    return buf;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

void cmd_report(const fs::path& run_arg, const std::optional<fs::path>& out_arg) {
    const fs::path run = output_root(run_arg);
    const fs::path out = out_arg ? output_root(*out_arg) : run;
    fs::create_directories(out);
    json combined{{"version", version_string}, {"volatile", {{"generated_at", timestamp()}}}};
    auto load = [&](char id) -> std::optional<json> {
        const fs::path p = run / std::string(1, id) / "report.json";
        if (!fs::exists(p)) return std::nullopt;
        return read_json(p, false);
    };
    std::ostringstream t2;
    t2 << "Study,CNN,RNN,LSTM hx,CV AUC,CV F1,CV MCC,External AUC,External F1,External MCC\n";
    json rows2 = json::array();
    for (char id : {'A', 'B', 'C', 'D', 'E'}) {
        const StudySpec& s = study_spec(id);
        const std::string rnn = s.crnn ? (s.rnn_kind == CellKind::lstm ? "LSTM" : s.rnn_kind == CellKind::talstm ? "TALSTM" : "tLSTM") : "-";
        const std::string hx = s.crnn ? std::to_string(s.rnn_hx) : "-";
        t2 << csv_quote(s.label) << ",ResNet," << rnn << ',' << hx;
        if (!s.in_scope) {
            t2 << ",out of scope (registration),,,,,\n";
            rows2.push_back({{"study", "C"}, {"status", "out of scope (registration)"}});
            continue;
        }
        const auto r = load(id);
        if (!r || !r->contains("summary")) {
            t2 << ",not run,,,,,\n";
            rows2.push_back({{"study", std::string(1, id)}, {"status", "not run"}});
            continue;
        }
        const json& sm = r->at("summary");
        for (const char* key : {"auc", "f1", "mcc"}) t2 << ',' << csv_quote(cell(sm, "cv", key));
        for (const char* key : {"auc", "f1", "mcc"}) t2 << ',' << csv_quote(cell(sm, "external", key));
        t2 << '\n';
        rows2.push_back({{"study", std::string(1, id)}, {"summary", sm}});
    }
    std::ostringstream t4;
    t4 << "CoxPH Study,Model,LSTM hx,IPCW C 5-fold CV,IPCW C External\n";
    json rows4 = json::array();
    for (char id : {'G', 'H'}) {
        const StudySpec& s = study_spec(id);
        t4 << csv_quote(s.label) << ',' << (s.crnn ? "ResNet+LSTM" : "ResNet") << ',' << (s.crnn ? std::to_string(s.rnn_hx) : "-");
        const auto r = load(id);
        if (!r || !r->contains("summary")) {
            t4 << ",not run,\n";
            rows4.push_back({{"study", std::string(1, id)}, {"status", "not run"}});
            continue;
        }
        const json& sm = r->at("summary");
        t4 << ',' << csv_quote(cell(sm, "cv", "ipcw_c")) << ',' << csv_quote(cell(sm, "external", "ipcw_c")) << '\n';
        rows4.push_back({{"study", std::string(1, id)}, {"summary", sm}});
    }
    write_file(out / "table2.csv", t2.str());
    write_file(out / "table4.csv", t4.str());
    combined["table2"] = rows2;
    combined["table4"] = rows4;
    if (fs::exists(run / "bands.csv")) {
        const std::string bands = read_file(run / "bands.csv");
        write_file(out / "table3.csv", bands);
        combined["table3_csv"] = bands;
    } else {
        combined["table3_csv"] = nullptr;
    }
    if (const auto f = load('F')) combined["study_f"] = f->value("summary", json::object());
    combined["report_hash"] = report_hash(combined);
    write_json(out / "summary.json", combined);
    std::cout << "tables written to " << out.string() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
    CLI::App app{"Survival modelling on longitudinal screening cohorts"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string);

    // generate
    auto* gen = app.add_subcommand("generate", "Simulate a synthetic cohort fixture");
    std::optional<fs::path> gen_config;
    fs::path gen_out;
    bool gen_force = false;
    std::optional<std::uint64_t> split_seed;
    std::map<std::string, std::string> gen_overrides;
    std::optional<std::string> g_n, g_seed, g_mode, g_ratio, g_censor, g_vol, g_noise, g_slope, g_beta;
    gen->add_option("--config", gen_config, "JSON config (a 'generator' section or a bare generator object)");
    gen->add_option("--out", gen_out, "Fixture directory")->required();
    gen->add_flag("--force", gen_force, "Overwrite an existing fixture");
    gen->add_option("--n", g_n, "Number of subjects");
    gen->add_option("--seed", g_seed, "Generator seed");
    gen->add_option("--split-seed", split_seed, "Seed for the split assignment (defaults to the generator seed)");
    gen->add_option("--mode", g_mode, "features or volumes");
    gen->add_option("--class-ratio", g_ratio, "Survivors per non-survivor, 0 keeps the natural mix");
    gen->add_option("--censor-rate", g_censor, "Target censoring fraction");
    gen->add_option("--volume-size", g_vol, "Edge length of generated volumes");
    gen->add_option("--noise", g_noise, "Observation noise standard deviation");
    gen->add_option("--slope", g_slope, "Progression signal strength per year");
    gen->add_option("--beta", g_beta, "True coefficients as a JSON array, e.g. [0.5,-0.3,0.8]");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Run the CT volume pipeline");
    std::optional<fs::path> pre_config, pre_input;
    bool pre_phantom = false;
    fs::path pre_out;
    std::vector<std::string> pre_stages;
    std::optional<std::string> pre_target;
    std::optional<double> pre_sigma;
    pre->add_option("--config", pre_config, "JSON config with a 'preprocess' section");
    pre->add_option("--input", pre_input, "HU volume stem (<stem>.json + blob)");
    pre->add_flag("--phantom", pre_phantom, "Use the built-in thorax phantom as input");
    pre->add_option("--out", pre_out, "Output directory")->required();
    pre->add_option("--emit-stage", pre_stages, "Dump the mask after a stage (binarize, filter, close, complete)");
    pre->add_option("--target", pre_target, "Output shape D,H,W");
    pre->add_option("--sigma", pre_sigma, "Gaussian sigma in voxels");

    // train
    auto* tr = app.add_subcommand("train", "Train one study over the configured folds");
    TrainArgs ta;
    tr->add_option("--config", ta.config, "Run config JSON");
    tr->add_option("--study", ta.study, "Study id A-H");
    tr->add_option("--fixture", ta.fixture, "Fixture directory");
    tr->add_option("--out", ta.out, "Run output directory");
    tr->add_option("--epochs", ta.epochs, "Epochs per fold");
    tr->add_option("--seed", ta.seed, "Base seed (fold k uses seed + k)");
    tr->add_option("--folds", ta.folds, "Comma-separated fold indices 0-4");
    tr->add_option("--lr", ta.lr, "Initial learning rate");
    tr->add_option("--batch-size", ta.batch_size, "Mini-batch size");
    tr->add_option("--steps-per-epoch", ta.steps_per_epoch, "Steps per epoch (0 = one pass)");
    tr->add_option("--width", ta.width, "Network width factor");
    tr->add_option("--hx", ta.hx, "Recurrent hidden size override");
    tr->add_flag("--no-sam", ta.no_sam, "Plain SGD instead of SAM");
    tr->add_flag("--retrain-cnn", ta.retrain_cnn, "Train a fresh CNN encoder instead of reusing the shared one");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Evaluate fold models or a score file");
    fs::path ev_run = "runs", ev_fixture;
    std::string ev_study;
    std::optional<fs::path> ev_out, ev_scores;
    std::optional<std::string> ev_split;
    ev->add_option("--run", ev_run, "Run output directory");
    ev->add_option("--study", ev_study, "Study id")->required();
    ev->add_option("--fixture", ev_fixture, "Fixture directory")->required();
    ev->add_option("--out", ev_out, "Report path (default <run>/<study>/report.json)");
    ev->add_option("--split", ev_split, "all, cv, internal_test, external_test or foldN");
    ev->add_option("--scores", ev_scores, "CSV of id,score to evaluate instead of checkpoints");

    // bands
    auto* bd = app.add_subcommand("bands", "Two-step classification by follow-up band");
    fs::path bd_run = "runs", bd_fixture;
    std::optional<fs::path> bd_out;
    std::string bd_main = "B", bd_cause = "F";
    bd->add_option("--run", bd_run, "Run output directory");
    bd->add_option("--fixture", bd_fixture, "Fixture directory")->required();
    bd->add_option("--out", bd_out, "CSV path (default <run>/bands.csv)");
    bd->add_option("--main-study", bd_main, "Mortality classifier study");
    bd->add_option("--cause-study", bd_cause, "Cause classifier study");

    // gradcam
    auto* gc = app.add_subcommand("gradcam", "Export Grad-CAM heatmaps for one subject");
    fs::path gc_run = "runs", gc_fixture, gc_out;
    std::string gc_study;
    std::size_t gc_fold = 0, gc_target = 1;
    std::uint32_t gc_subject = 0;
    std::optional<std::size_t> gc_slice;
    gc->add_option("--run", gc_run, "Run output directory");
    gc->add_option("--study", gc_study, "Study id")->required();
    gc->add_option("--fold", gc_fold, "Fold index 0-4");
    gc->add_option("--fixture", gc_fixture, "Fixture directory")->required();
    gc->add_option("--subject", gc_subject, "Subject id")->required();
    gc->add_option("--out", gc_out, "Output directory")->required();
    gc->add_option("--slice", gc_slice, "Axial slice for PNG export (default middle)");
    gc->add_option("--target-class", gc_target, "Logit index for classifier heads");

    // report
    auto* rp = app.add_subcommand("report", "Assemble the summary tables");
    fs::path rp_run = "runs";
    std::optional<fs::path> rp_out;
    rp->add_option("--run", rp_run, "Run output directory");
    rp->add_option("--out", rp_out, "Output directory (default the run directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        if (*gen) {
            auto add = [&](const char* key, const std::optional<std::string>& v) {
                if (v) gen_overrides[key] = *v;
            };
            add("n_subjects", g_n);
            add("seed", g_seed);
            add("mode", g_mode);
            add("class_ratio", g_ratio);
            add("censor_rate", g_censor);
            add("volume_size", g_vol);
            add("observation_noise", g_noise);
            add("slope_signal_strength", g_slope);
            add("true_beta", g_beta);
            cmd_generate(gen_config, gen_out, gen_force, gen_overrides, split_seed);
        } else if (*pre) {
            cmd_preprocess(pre_config, pre_input, pre_phantom, pre_out, pre_stages, pre_target, pre_sigma);
        } else if (*tr) {
            cmd_train(ta);
        } else if (*ev) {
            cmd_evaluate(ev_run, ev_study, ev_fixture, ev_out, ev_split, ev_scores);
        } else if (*bd) {
            cmd_bands(bd_run, bd_fixture, bd_out, bd_main, bd_cause);
        } else if (*gc) {
            cmd_gradcam(gc_run, gc_study, gc_fold, gc_fixture, gc_subject, gc_out, gc_slice, gc_target);
        } else if (*rp) {
            cmd_report(rp_run, rp_out);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const json::exception& e) {
        std::cerr << "error: invalid JSON value: " << e.what() << '\n';
        return exit_config;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    }
    return exit_ok;
}

}  // namespace lcsurv::cli
