#pragma once

// Synthetic longitudinal screening cohorts with known proportional hazards.
//
// Each subject has three screening points (T0 < T1 < T2, roughly annual) and
// latent covariates x ~ N(0, I). Event times follow h(t|x) = h0(t) exp(beta'x)
// from T2 onward and are censored independently. Observed per-timepoint
// data are either feature vectors
//     f(t) = x + progression * t_years + noise
// where the progression direction carries the non-survivor signal, or small
// volumes rendering those features as Gaussian blobs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lcsurv/recurrent.hpp"
#include "lcsurv/survival.hpp"

namespace lcsurv {

enum class SplitTag { fold1 = 0, fold2, fold3, fold4, fold5, internal_test, external_test, unassigned };
enum class BaselineKind { exponential, weibull };
enum class InputMode { features, volumes };

inline constexpr std::size_t fold_count = 5;
inline constexpr std::size_t timepoint_count = 3;

std::string to_string(SplitTag tag);
SplitTag parse_split_tag(const std::string& name);
SplitTag fold_tag(std::size_t fold);  // fold in [0, 5)
std::string to_string(Cause cause);
Cause parse_cause(const std::string& name);
std::string to_string(InputMode mode);
InputMode parse_input_mode(const std::string& name);

struct GeneratorConfig {
    std::size_t n_subjects = 2154;
    // Survivors per non-survivor for case-control style sampling; 0 keeps the
    // natural event/censoring mix.
    double class_ratio = 2.0;
    BaselineKind baseline = BaselineKind::exponential;
    double baseline_rate = 0.1;  // per year
    double weibull_shape = 1.5;
    std::vector<double> true_beta{0.5, -0.3, 0.8};
    double censor_rate = 0.3;
    double max_followup_years = 0.0;  // administrative censoring, 0 = none
    double slope_signal_strength = 0.25;
    double observation_noise = 0.1;
    double cause_signal = 1.5;
    double cardiac_fraction = 374.0 / 718.0;
    double scan_interval_days = 365.0;
    double interval_iqr_days = 40.0;
    std::size_t n_centres = 32;
    std::size_t internal_centres = 26;
    double external_noise_scale = 2.0;
    double external_offset = 0.3;
    InputMode mode = InputMode::features;
    std::size_t volume_size = 16;
    std::uint64_t seed = 1;

    std::size_t feature_dim() const { return true_beta.size(); }
    void validate() const;
};

struct SubjectRecord {
    std::uint32_t id = 0;
    std::uint32_t centre = 0;
    std::array<double, timepoint_count> scan_times{};  // days since T0
    std::vector<Tensor> timepoints;                    // [f] features or [1, V, V, V] volumes
    std::vector<double> latent;
    SurvivalLabel label;
    Cause cause = Cause::none;
    SplitTag split = SplitTag::unassigned;

    int non_survivor() const { return label.event; }
    MortalityClass mortality_class() const;
    std::array<double, timepoint_count> deltas() const;
};

struct Cohort {
    GeneratorConfig config;
    std::vector<SubjectRecord> subjects;
    // Harrell's C of the true log-risk beta'x against the generated outcomes.
    double oracle_c_index = 0.5;

    Shape item_shape() const;
    std::vector<std::size_t> indices(SplitTag tag) const;
    std::vector<std::size_t> indices_where(const std::function<bool(const SubjectRecord&)>& keep) const;
    const SubjectRecord& by_id(std::uint32_t id) const;
};

Cohort simulate_cohort(const GeneratorConfig& cfg);
void assign_splits(Cohort& cohort, std::uint64_t seed);

// True log-risk beta'x of one subject.
double true_risk(const Cohort& cohort, const SubjectRecord& subject);

// Draws item indices with probability inversely proportional to the size of
// the item's class, with replacement.
class WeightedSampler {
public:
    WeightedSampler(std::span<const int> class_of_item, std::uint64_t seed);
    static WeightedSampler from_class_sizes(std::span<const std::size_t> sizes, std::uint64_t seed);

    std::size_t next();
    std::vector<std::size_t> draw(std::size_t n);
    double probability(std::size_t item) const { return probs_.at(item); }
    std::size_t size() const { return probs_.size(); }

private:
    std::vector<double> probs_;
    std::vector<double> cumulative_;
    Rng rng_;
};

// Counts of non-survivor follow-up times in bins [k*w, (k+1)*w).
std::vector<std::size_t> followup_histogram(const Cohort& cohort, double bin_width_days);

// Fixture directory: cohort.json (metadata, labels, splits) and
// timepoints.f32 (float32 little-endian, subject-major [n, 3, item...]).
inline constexpr int cohort_schema_version = 1;
void save_cohort(const std::filesystem::path& dir, const Cohort& cohort);
Cohort load_cohort(const std::filesystem::path& dir);

}  // namespace lcsurv
