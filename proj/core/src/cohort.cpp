#include "lcsurv/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "lcsurv/error.hpp"
#include "lcsurv/io.hpp"

namespace lcsurv {

using nlohmann::json;

namespace {

constexpr const char* split_names[] = {"fold1", "fold2", "fold3", "fold4", "fold5",
                                       "internal_test", "external_test", "unassigned"};
// Internal test share of the internal cohort (309 of 1869 in the reference split).
constexpr double internal_test_fraction = 309.0 / 1869.0;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng subject_rng(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(seed ^ splitmix64(index + 1)));
}

// Draws made for every pool candidate, before outcome-dependent rendering.
struct Candidate {
    std::vector<double> x;
    double event_years = 0.0;
    double censor_unit = 0.0;  // Exp(1) draw, scaled by the censoring rate
    std::uint32_t centre = 0;
    std::array<double, timepoint_count> scan_times{};
    double cause_u = 0.0;
    Rng rng;
};

Candidate draw_candidate(const GeneratorConfig& cfg, std::uint64_t index) {
    Candidate c{{}, 0, 0, 0, {}, 0, subject_rng(cfg.seed, index)};
    auto& rng = c.rng;
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    c.x.resize(cfg.feature_dim());
    for (auto& v : c.x) v = normal(rng);
    const double lin = std::inner_product(c.x.begin(), c.x.end(), cfg.true_beta.begin(), 0.0);
    // Inverse transform of H0(t) = (rate * t)^shape.
    const double e = expo(rng);
    const double shape = cfg.baseline == BaselineKind::exponential ? 1.0 : cfg.weibull_shape;
    c.event_years = std::pow(e / std::exp(lin), 1.0 / shape) / cfg.baseline_rate;
    c.censor_unit = expo(rng);
    c.centre = static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, cfg.n_centres - 1)(rng));
    // Interval jitter: normal with the configured inter-quartile range.
    const double jitter_sd = cfg.interval_iqr_days / 1.3489795003921634;
    c.scan_times[0] = 0.0;
    for (std::size_t k = 1; k < timepoint_count; ++k) {
        const double gap = std::max(30.0, cfg.scan_interval_days + jitter_sd * normal(rng));
        c.scan_times[k] = c.scan_times[k - 1] + std::round(gap);
    }
    c.cause_u = uniform(rng);
    return c;
}

// Smallest-error censoring rate so that a fraction r of candidates has
// censor_unit / rate < event time. Candidate i is censored iff rate > kappa_i.
double calibrate_censoring(const std::vector<Candidate>& pool, double r) {
    if (r <= 0.0) return 0.0;
    std::vector<double> kappa;
    kappa.reserve(pool.size());
    for (const auto& c : pool) kappa.push_back(c.censor_unit / c.event_years);
    std::sort(kappa.begin(), kappa.end());
    const auto k = static_cast<std::size_t>(std::llround(r * static_cast<double>(pool.size())));
    if (k == 0) return 0.0;
    if (k >= kappa.size()) return kappa.back() * 2.0 + 1.0;
    return 0.5 * (kappa[k - 1] + kappa[k]);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void render(const GeneratorConfig& cfg, Candidate& c, SubjectRecord& s) {
    auto& rng = c.rng;
    std::normal_distribution<double> normal;
    const bool external = c.centre >= cfg.internal_centres;
    const double noise_sd = cfg.observation_noise * (external ? cfg.external_noise_scale : 1.0);
    const double offset = external ? cfg.external_offset : 0.0;
    const double sign = s.label.event ? 1.0 : -1.0;
    const std::size_t p = cfg.feature_dim();

    for (std::size_t t = 0; t < timepoint_count; ++t) {
        const double years = c.scan_times[t] / days_per_year;
        std::vector<double> f(p);
        for (std::size_t k = 0; k < p; ++k) {
            const double progression = k == 0 ? cfg.slope_signal_strength * sign : 0.0;
            f[k] = c.x[k] + progression * years + offset;
        }
        if (cfg.mode == InputMode::features) {
            Tensor feat({p});
            for (std::size_t k = 0; k < p; ++k) feat[k] = f[k] + noise_sd * normal(rng);
            feat.set_dtype(Dtype::f32);
            feat.set_dtype(Dtype::f64);
            s.timepoints.push_back(std::move(feat));
        } else {
            const std::size_t V = cfg.volume_size;
            const double mid = 0.5 * static_cast<double>(V - 1);
            const double ring = 0.25 * static_cast<double>(V);
            const double sigma = static_cast<double>(V) / 8.0;
            Tensor vol({1, V, V, V});
            for (std::size_t z = 0; z < V; ++z) {
                for (std::size_t y = 0; y < V; ++y) {
                    for (std::size_t xx = 0; xx < V; ++xx) {
                        double v = 0.0;
                        for (std::size_t k = 0; k < p; ++k) {
                            const double ang = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(p);
                            const double cy = mid + ring * std::sin(ang), cx = mid + ring * std::cos(ang);
                            const double dz = static_cast<double>(z) - mid, dy = static_cast<double>(y) - cy;
                            const double dx = static_cast<double>(xx) - cx;
                            v += f[k] * std::exp(-(dz * dz + dy * dy + dx * dx) / (2 * sigma * sigma));
                        }
                        vol[(z * V + y) * V + xx] = v + noise_sd * normal(rng);
                    }
                }
            }
            vol.set_dtype(Dtype::f32);
            vol.set_dtype(Dtype::f64);
            s.timepoints.push_back(std::move(vol));
        }
    }
}

double pair_enumeration_c(const std::vector<double>& risk, const std::vector<SurvivalLabel>& labels) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < risk.size(); ++i) {
        if (labels[i].event != 1) continue;
        for (std::size_t j = 0; j < risk.size(); ++j) {
            if (labels[j].time <= labels[i].time) continue;
            den += 1.0;
            if (risk[i] > risk[j]) num += 1.0;
            else if (risk[i] == risk[j]) num += 0.5;
        }
    }
    return den > 0 ? num / den : 0.5;
}

}  // namespace

std::string to_string(SplitTag tag) { return split_names[static_cast<int>(tag)]; }

SplitTag parse_split_tag(const std::string& name) {
    for (int i = 0; i < 8; ++i) {
        if (name == split_names[i]) return static_cast<SplitTag>(i);
    }
    throw ArgumentError("unknown split '" + name + "'");
}

SplitTag fold_tag(std::size_t fold) {
    if (fold >= fold_count) throw ArgumentError("fold index " + std::to_string(fold) + " out of range");
    return static_cast<SplitTag>(fold);
}

std::string to_string(Cause cause) {
    switch (cause) {
        case Cause::none: return "none";
        case Cause::cardiac: return "cardiac";
        case Cause::respiratory: return "respiratory";
    }
    return "none";
}

Cause parse_cause(const std::string& name) {
    if (name == "none") return Cause::none;
    if (name == "cardiac") return Cause::cardiac;
    if (name == "respiratory") return Cause::respiratory;
    throw DataError("unknown cause '" + name + "'");
}

std::string to_string(InputMode mode) { return mode == InputMode::features ? "features" : "volumes"; }

InputMode parse_input_mode(const std::string& name) {
    if (name == "features") return InputMode::features;
    if (name == "volumes") return InputMode::volumes;
    throw ConfigError("unknown input mode '" + name + "'");
}

void GeneratorConfig::validate() const {
    if (n_subjects == 0) throw ArgumentError("generator: n_subjects must be positive");
    if (true_beta.empty()) throw ConfigError("generator: true_beta must have at least one coefficient");
    if (!(baseline_rate > 0.0)) throw ConfigError("generator: baseline hazard rate must be positive");
    if (baseline == BaselineKind::weibull && !(weibull_shape > 0.0)) throw ConfigError("generator: weibull shape must be positive");
    if (!(censor_rate >= 0.0 && censor_rate < 1.0)) throw ConfigError("generator: censor_rate must lie in [0, 1)");
    if (!(class_ratio >= 0.0)) throw ConfigError("generator: class_ratio must be nonnegative");
    if (!(cardiac_fraction >= 0.0 && cardiac_fraction <= 1.0)) throw ConfigError("generator: cardiac_fraction outside [0, 1]");
    if (n_centres == 0 || internal_centres == 0 || internal_centres > n_centres) {
        throw ConfigError("generator: need 0 < internal_centres <= n_centres");
    }
    if (mode == InputMode::volumes && volume_size < 4) throw ConfigError("generator: volume_size must be at least 4");
    if (!(observation_noise >= 0.0)) throw ConfigError("generator: observation_noise must be nonnegative");
}

MortalityClass SubjectRecord::mortality_class() const {
    if (!label.event) return MortalityClass::survivor;
    return cause == Cause::cardiac ? MortalityClass::cardiac : MortalityClass::respiratory;
}

std::array<double, timepoint_count> SubjectRecord::deltas() const {
    std::array<double, timepoint_count> d{};
    for (std::size_t t = 1; t < timepoint_count; ++t) d[t] = scan_times[t] - scan_times[t - 1];
    return d;
}

Shape Cohort::item_shape() const {
    if (subjects.empty()) throw DataError("cohort is empty");
    return subjects.front().timepoints.front().shape();
}

std::vector<std::size_t> Cohort::indices(SplitTag tag) const {
    return indices_where([tag](const SubjectRecord& s) { return s.split == tag; });
}

std::vector<std::size_t> Cohort::indices_where(const std::function<bool(const SubjectRecord&)>& keep) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        if (keep(subjects[i])) out.push_back(i);
    }
    return out;
}

const SubjectRecord& Cohort::by_id(std::uint32_t id) const {
    for (const auto& s : subjects) {
        if (s.id == id) return s;
    }
    throw ArgumentError("no subject with id " + std::to_string(id));
}

double true_risk(const Cohort& cohort, const SubjectRecord& subject) {
    return std::inner_product(subject.latent.begin(), subject.latent.end(), cohort.config.true_beta.begin(), 0.0);
}

Cohort simulate_cohort(const GeneratorConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.n_subjects;
    const bool matched = cfg.class_ratio > 0.0;
    std::size_t want_events = 0, want_censored = 0;
    if (matched) {
        want_events = static_cast<std::size_t>(std::llround(static_cast<double>(n) / (1.0 + cfg.class_ratio)));
        want_censored = n - std::min(n, want_events);
        if (want_events == 0 || want_censored == 0 || want_events >= n) {
            throw ArgumentError("generator: class ratio " + std::to_string(cfg.class_ratio) + " is infeasible for " +
                                std::to_string(n) + " subjects");
        }
        if (cfg.censor_rate <= 0.0) {
            throw ArgumentError("generator: matched class ratio needs censored survivors but censor_rate is 0");
        }
    }

    std::size_t pool_size = n;
    if (matched) {
        const double need = std::max(static_cast<double>(want_events) / (1.0 - cfg.censor_rate),
                                     static_cast<double>(want_censored) / cfg.censor_rate);
        pool_size = static_cast<std::size_t>(std::ceil(need * 1.1)) + 16;
    }

    for (int attempt = 0; attempt < 8; ++attempt, pool_size *= 2) {
        std::vector<Candidate> pool;
        pool.reserve(pool_size);
        for (std::size_t i = 0; i < pool_size; ++i) pool.push_back(draw_candidate(cfg, i));
        const double censor_rate_per_year = calibrate_censoring(pool, cfg.censor_rate);

        std::vector<std::size_t> chosen;
        std::vector<SurvivalLabel> labels;
        std::size_t got_events = 0, got_censored = 0;
        for (std::size_t i = 0; i < pool.size() && chosen.size() < n; ++i) {
            const auto& c = pool[i];
            double censor_years = censor_rate_per_year > 0 ? c.censor_unit / censor_rate_per_year
                                                           : std::numeric_limits<double>::infinity();
            if (cfg.max_followup_years > 0) censor_years = std::min(censor_years, cfg.max_followup_years);
            const bool event = c.event_years <= censor_years;
            if (matched) {
                if (event && got_events >= want_events) continue;
                if (!event && got_censored >= want_censored) continue;
            }
            (event ? got_events : got_censored)++;
            chosen.push_back(i);
            labels.push_back({std::min(c.event_years, censor_years) * days_per_year, event ? 1 : 0});
        }
        if (chosen.size() < n) continue;

        Cohort cohort;
        cohort.config = cfg;
        cohort.subjects.reserve(n);
        std::vector<double> risk;
        for (std::size_t k = 0; k < n; ++k) {
            auto& c = pool[chosen[k]];
            SubjectRecord s;
            s.id = static_cast<std::uint32_t>(k);
            s.centre = c.centre;
            s.scan_times = c.scan_times;
            s.latent = c.x;
            s.label = labels[k];
            if (s.label.event) {
                const double logit = std::log(cfg.cardiac_fraction / (1.0 - cfg.cardiac_fraction + 1e-300)) +
                                     cfg.cause_signal * c.x.back();
                s.cause = c.cause_u < sigmoid(logit) ? Cause::cardiac : Cause::respiratory;
            }
            render(cfg, c, s);
            risk.push_back(std::inner_product(c.x.begin(), c.x.end(), cfg.true_beta.begin(), 0.0));
            cohort.subjects.push_back(std::move(s));
        }
        cohort.oracle_c_index = pair_enumeration_c(risk, labels);
        return cohort;
    }
    throw ArgumentError("generator: could not reach the requested class ratio from the candidate pool");
}

void assign_splits(Cohort& cohort, std::uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0x5eed5eed5eedULL));
    std::array<std::vector<std::size_t>, 3> by_class;
    std::size_t external = 0;
    for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
        auto& s = cohort.subjects[i];
        if (s.centre >= cohort.config.internal_centres) {
            s.split = SplitTag::external_test;
            ++external;
        } else {
            by_class[static_cast<std::size_t>(s.mortality_class())].push_back(i);
        }
    }
    std::vector<std::size_t> cv_order;
    std::size_t internal_test = 0;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto n_test = static_cast<std::size_t>(
            std::llround(internal_test_fraction * static_cast<double>(members.size())));
        for (std::size_t k = 0; k < members.size(); ++k) {
            if (k < n_test) {
                cohort.subjects[members[k]].split = SplitTag::internal_test;
                ++internal_test;
            } else {
                cv_order.push_back(members[k]);
            }
        }
    }
    // Class-ordered round robin keeps per-class and total fold sizes within one.
    for (std::size_t k = 0; k < cv_order.size(); ++k) cohort.subjects[cv_order[k]].split = fold_tag(k % fold_count);
    if (external == 0 || internal_test == 0 || cv_order.size() < fold_count) {
        throw ArgumentError("cohort of " + std::to_string(cohort.subjects.size()) +
                            " subjects is too small for 5 folds, an internal test set and an external test set");
    }
}

WeightedSampler::WeightedSampler(std::span<const int> class_of_item, std::uint64_t seed) : rng_(splitmix64(seed)) {
    if (class_of_item.empty()) throw ArgumentError("weighted sampler: no items");
    const int max_class = *std::max_element(class_of_item.begin(), class_of_item.end());
    if (*std::min_element(class_of_item.begin(), class_of_item.end()) < 0) throw ArgumentError("weighted sampler: negative class");
    std::vector<std::size_t> sizes(static_cast<std::size_t>(max_class) + 1, 0);
    for (int c : class_of_item) ++sizes[static_cast<std::size_t>(c)];
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        if (sizes[c] == 0) throw ArgumentError("weighted sampler: class " + std::to_string(c) + " is empty");
    }
    const double classes = static_cast<double>(sizes.size());
    double acc = 0.0;
    for (int c : class_of_item) {
        const double p = 1.0 / (classes * static_cast<double>(sizes[static_cast<std::size_t>(c)]));
        probs_.push_back(p);
        acc += p;
        cumulative_.push_back(acc);
    }
}

WeightedSampler WeightedSampler::from_class_sizes(std::span<const std::size_t> sizes, std::uint64_t seed) {
    std::vector<int> classes;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        if (sizes[c] == 0) throw ArgumentError("weighted sampler: class " + std::to_string(c) + " is empty");
        classes.insert(classes.end(), sizes[c], static_cast<int>(c));
    }
    return WeightedSampler(classes, seed);
}

std::size_t WeightedSampler::next() {
    const double u = std::uniform_real_distribution<double>(0.0, cumulative_.back())(rng_);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return static_cast<std::size_t>(it - cumulative_.begin());
}

std::vector<std::size_t> WeightedSampler::draw(std::size_t n) {
    std::vector<std::size_t> out(n);
    for (auto& v : out) v = next();
    return out;
}

std::vector<std::size_t> followup_histogram(const Cohort& cohort, double bin_width_days) {
    if (!(bin_width_days > 0.0)) throw ArgumentError("histogram bin width must be positive");
    std::vector<std::size_t> counts;
    for (const auto& s : cohort.subjects) {
        if (!s.label.event) continue;
        const auto bin = static_cast<std::size_t>(std::floor(s.label.time / bin_width_days));
        if (bin >= counts.size()) counts.resize(bin + 1, 0);
        ++counts[bin];
    }
    return counts;
}

// ---------------------------------------------------------------- fixture I/O

namespace {

json config_to_json(const GeneratorConfig& c) {
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

GeneratorConfig config_from_json(const json& j) {
    GeneratorConfig c;
    c.n_subjects = j.at("n_subjects").get<std::size_t>();
    c.class_ratio = j.at("class_ratio").get<double>();
    c.baseline = j.at("baseline").get<std::string>() == "weibull" ? BaselineKind::weibull : BaselineKind::exponential;
    c.baseline_rate = j.at("baseline_rate").get<double>();
    c.weibull_shape = j.at("weibull_shape").get<double>();
    c.true_beta = j.at("true_beta").get<std::vector<double>>();
    c.censor_rate = j.at("censor_rate").get<double>();
    c.max_followup_years = j.at("max_followup_years").get<double>();
    c.slope_signal_strength = j.at("slope_signal_strength").get<double>();
    c.observation_noise = j.at("observation_noise").get<double>();
    c.cause_signal = j.at("cause_signal").get<double>();
    c.cardiac_fraction = j.at("cardiac_fraction").get<double>();
    c.scan_interval_days = j.at("scan_interval_days").get<double>();
    c.interval_iqr_days = j.at("interval_iqr_days").get<double>();
    c.n_centres = j.at("n_centres").get<std::size_t>();
    c.internal_centres = j.at("internal_centres").get<std::size_t>();
    c.external_noise_scale = j.at("external_noise_scale").get<double>();
    c.external_offset = j.at("external_offset").get<double>();
    c.mode = parse_input_mode(j.at("mode").get<std::string>());
    c.volume_size = j.at("volume_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void save_cohort(const std::filesystem::path& dir, const Cohort& cohort) {
    const Shape item = cohort.item_shape();
    std::string blob;
    blob.reserve(cohort.subjects.size() * timepoint_count * shape_size(item) * 4);
    json subjects = json::array();
    for (const auto& s : cohort.subjects) {
        for (const auto& t : s.timepoints) {
            if (t.shape() != item) throw DataError("cohort items have inconsistent shapes");
            for (double v : t.values()) put_f32(blob, static_cast<float>(v));
        }
        subjects.push_back({{"id", s.id},
                            {"centre", s.centre},
                            {"scan_times", s.scan_times},
                            {"latent", s.latent},
                            {"time", s.label.time},
                            {"event", s.label.event},
                            {"cause", to_string(s.cause)},
                            {"split", to_string(s.split)}});
    }
    json meta{{"schema_version", cohort_schema_version},
              {"generator", config_to_json(cohort.config)},
              {"oracle_c_index", cohort.oracle_c_index},
              {"item_shape", item},
              {"timepoints", timepoint_count},
              {"blob", {{"file", "timepoints.f32"},
                        {"dtype", "float32"},
                        {"byte_order", "little"},
                        {"layout", "subject-major [n_subjects, timepoints, item_shape...]"},
                        {"bytes", blob.size()}}},
              {"subjects", std::move(subjects)}};
    std::filesystem::create_directories(dir);
    write_file(dir / "cohort.json", meta.dump(1));
    write_file(dir / "timepoints.f32", blob);
}

Cohort load_cohort(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "cohort.json")) throw DataError("no cohort fixture at " + dir.string());
    json meta;
    try {
        meta = json::parse(read_file(dir / "cohort.json"));
    } catch (const json::exception& e) {
        throw DataError("malformed cohort.json: " + std::string(e.what()));
    }
    try {
        if (meta.at("schema_version").get<int>() != cohort_schema_version) {
            throw DataError("unsupported cohort schema version");
        }
        Cohort cohort;
        cohort.config = config_from_json(meta.at("generator"));
        cohort.oracle_c_index = meta.at("oracle_c_index").get<double>();
        const Shape item = meta.at("item_shape").get<Shape>();
        const std::string blob = read_file(dir / meta.at("blob").at("file").get<std::string>());
        const std::size_t per_item = shape_size(item);
        const auto& subjects = meta.at("subjects");
        if (blob.size() != subjects.size() * timepoint_count * per_item * 4) {
            throw DataError("timepoint blob size does not match cohort metadata");
        }
        ByteReader in(blob);
        for (const auto& js : subjects) {
            SubjectRecord s;
            s.id = js.at("id").get<std::uint32_t>();
            s.centre = js.at("centre").get<std::uint32_t>();
            s.scan_times = js.at("scan_times").get<std::array<double, timepoint_count>>();
            s.latent = js.at("latent").get<std::vector<double>>();
            s.label = {js.at("time").get<double>(), js.at("event").get<int>()};
            s.label.validate();
            s.cause = parse_cause(js.at("cause").get<std::string>());
            s.split = parse_split_tag(js.at("split").get<std::string>());
            for (std::size_t t = 0; t < timepoint_count; ++t) {
                std::vector<double> values(per_item);
                for (auto& v : values) v = in.f32();
                s.timepoints.emplace_back(item, std::move(values));
            }
            cohort.subjects.push_back(std::move(s));
        }
        return cohort;
    } catch (const json::exception& e) {
        throw DataError("invalid cohort.json: " + std::string(e.what()));
    }
}

}  // namespace lcsurv
