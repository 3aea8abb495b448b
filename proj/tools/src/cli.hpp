#pragma once

// The lcsurv command line: fixture generation, preprocessing, training and
// evaluation of the study grid, band analysis, Grad-CAM export and report
// assembly. Exposed as a library so tests can drive it in-process.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcsurv/cohort.hpp"
#include "lcsurv/error.hpp"
#include "lcsurv/models.hpp"
#include "lcsurv/training.hpp"

namespace lcsurv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// Process exit codes.
inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 2;
inline constexpr int exit_data = 3;
inline constexpr int exit_numeric = 4;

int exit_code_for(ErrorKind kind);

// Runs one invocation; argv[0] is the program name. Errors are reported on
// stderr and mapped to exit codes.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

struct StudySpec {
    char id = 'A';
    std::string label;        // row label in the summary tables
    bool crnn = false;
    bool in_scope = true;
    CellKind rnn_kind = CellKind::lstm;
    std::size_t rnn_hx = 32;
    HeadKind head = HeadKind::classifier2;
    char cnn_study = 0;       // study whose fold CNNs become the frozen encoder
    bool non_survivors_only = false;
};

const StudySpec& study_spec(char id);
const std::vector<StudySpec>& all_studies();

struct RunConfig {
    fs::path fixture;
    char study = 'A';
    std::uint64_t seed = 1;
    std::size_t epochs = 5;
    fs::path output = "runs";
    ModelConfig model;
    OptimConfig optim;
    bool use_sam = true;
    std::size_t steps_per_epoch = 0;
    std::vector<std::size_t> folds{0, 1, 2, 3, 4};
    bool retrain_cnn = false;

    // Documented keys only; anything else is a configuration error.
    static RunConfig from_json(const json& j);
    json to_json() const;
};

GeneratorConfig generator_from_json(const json& j, GeneratorConfig base = {});
json generator_to_json(const GeneratorConfig& cfg);

// Resolves relative output paths against $LCSURV_OUTPUT_ROOT when it is set.
fs::path output_root(const fs::path& requested);

// Study model config for a fixture (input mode and item shape follow the cohort).
ModelConfig study_model_config(const RunConfig& cfg, const StudySpec& spec, const Cohort& cohort);

// Subjects that belong to the study's population within a split.
std::vector<std::size_t> study_members(const Cohort& cohort, const StudySpec& spec, SplitTag tag);
std::vector<std::size_t> training_members(const Cohort& cohort, const StudySpec& spec, std::size_t fold);

// Class targets (non-survivor, or respiratory for the cause study) and survival labels.
TaskData item_task(const Cohort& cohort, const StudySpec& spec, const std::vector<std::size_t>& members);
TaskData sequence_task(const Cohort& cohort, const StudySpec& spec, const std::vector<std::size_t>& members,
                       CrnnModel& model);

struct MeanSd {
    std::optional<double> mean;
    std::optional<double> sd;  // sample SD, only over exactly five folds
};
MeanSd mean_sd(const std::vector<std::optional<double>>& values);

// Metric set for one split: AUC/F1/MCC for classifiers, Harrell and IPCW C for Cox.
json split_metrics(HeadKind head, const std::vector<double>& scores, const TaskData& data);

// Report JSON without its volatile block, as a stable FNV-1a hex digest.
std::string report_hash(const json& report);

// Scores of every fold model of a study for the given subjects, [fold][subject].
std::vector<std::vector<double>> fold_scores(const fs::path& study_dir, const Cohort& cohort,
                                             const std::vector<std::size_t>& members, const StudySpec& spec,
                                             std::vector<std::size_t>* folds_found = nullptr);

// Two-step prediction from the ensembled main and cause models.
std::vector<MortalityClass> two_step_predictions(const std::vector<double>& mortality_prob,
                                                 const std::vector<double>& respiratory_prob);

// Band table (3/7/11 years) as CSV, one row per class and three columns per band.
std::string bands_csv(const std::vector<BandConfusion>& bands);
std::vector<BandConfusion> compute_bands(const Cohort& cohort, const std::vector<MortalityClass>& predicted);

}  // namespace lcsurv::cli
