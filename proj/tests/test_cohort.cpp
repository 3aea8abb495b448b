#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "lcsurv/cohort.hpp"
#include "lcsurv/error.hpp"
#include "lcsurv/io.hpp"
#include "oracles.hpp"

using namespace lcsurv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lcsurv_test_cohort_" + name);
    fs::remove_all(p);
    return p;
}

GeneratorConfig natural(std::size_t n, std::vector<double> beta, double censor, std::uint64_t seed = 1) {
    GeneratorConfig g;
    g.n_subjects = n;
    g.class_ratio = 0.0;
    g.true_beta = std::move(beta);
    g.censor_rate = censor;
    g.seed = seed;
    return g;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("default cohort shape") {
    GeneratorConfig g;
    g.n_subjects = 600;
    const Cohort c = simulate_cohort(g);
    REQUIRE(c.subjects.size() == 600);
    std::size_t events = 0;
    for (const auto& s : c.subjects) {
        CHECK(s.timepoints.size() == timepoint_count);
        CHECK(s.timepoints[0].shape() == Shape{3});
        CHECK(s.scan_times[0] == 0.0);
        CHECK(s.scan_times[0] < s.scan_times[1]);
        CHECK(s.scan_times[1] < s.scan_times[2]);
        CHECK(s.label.time >= 0.0);
        CHECK((s.cause != Cause::none) == (s.label.event == 1));
        events += static_cast<std::size_t>(s.label.event);
    }
    // One non-survivor for every two survivors.
    CHECK(events == 200);
}

TEST_CASE("scan intervals are roughly annual with a 40 day IQR") {
    GeneratorConfig g;
    g.n_subjects = 2000;
    const Cohort c = simulate_cohort(g);
    std::vector<double> gaps;
    for (const auto& s : c.subjects) {
        gaps.push_back(s.scan_times[1] - s.scan_times[0]);
        gaps.push_back(s.scan_times[2] - s.scan_times[1]);
    }
    std::sort(gaps.begin(), gaps.end());
    const double q1 = gaps[gaps.size() / 4], q2 = gaps[gaps.size() / 2], q3 = gaps[3 * gaps.size() / 4];
    CHECK(q2 == doctest::Approx(365.0).epsilon(0.02));
    CHECK(q3 - q1 == doctest::Approx(40.0).epsilon(0.15));
}

TEST_CASE("no signal gives chance-level oracle concordance") {
    const Cohort c = simulate_cohort(natural(2000, {0.0, 0.0, 0.0}, 0.3));
    CHECK(std::abs(c.oracle_c_index - 0.5) <= 0.03);
}

TEST_CASE("zero censoring gives events for everyone") {
    const Cohort c = simulate_cohort(natural(300, {0.5, -0.3, 0.8}, 0.0));
    for (const auto& s : c.subjects) CHECK(s.label.event == 1);
    GeneratorConfig matched = natural(300, {0.5, -0.3, 0.8}, 0.0);
    matched.class_ratio = 2.0;
    CHECK_THROWS_AS(simulate_cohort(matched), ArgumentError);
}

TEST_CASE("censoring rate is honoured") {
    const Cohort c = simulate_cohort(natural(2000, {0.5, -0.3, 0.8}, 0.3));
    std::size_t censored = 0;
    for (const auto& s : c.subjects) censored += s.label.event ? 0 : 1;
    CHECK(static_cast<double>(censored) / 2000.0 == doctest::Approx(0.3).epsilon(0.1));
}

TEST_CASE("stored oracle concordance equals pair enumeration of the true risk") {
    const Cohort c = simulate_cohort(natural(400, {0.5, -0.3, 0.8}, 0.3, 7));
    std::vector<double> risk;
    std::vector<SurvivalLabel> labels;
    for (const auto& s : c.subjects) {
        risk.push_back(true_risk(c, s));
        labels.push_back(s.label);
    }
    CHECK(c.oracle_c_index == doctest::Approx(oracle::harrell_c(risk, labels)).epsilon(1e-14));
    CHECK(c.oracle_c_index > 0.6);
}

TEST_CASE("proportional hazards fidelity between feature quartiles") {
    GeneratorConfig g = natural(5000, {1.0, 0.0, 0.0}, 0.3, 3);
    g.slope_signal_strength = 0.0;
    const Cohort c = simulate_cohort(g);
    std::vector<std::size_t> order(c.subjects.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto feature = [&](std::size_t i) { return c.subjects[i].timepoints.back()[0]; };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return feature(a) < feature(b); });
    const std::size_t q = order.size() / 4;
    auto group = [&](std::size_t from, std::size_t to, double& mean_x) {
        double events = 0.0, exposure = 0.0, sx = 0.0;
        for (std::size_t k = from; k < to; ++k) {
            const auto& s = c.subjects[order[k]];
            events += s.label.event;
            exposure += s.label.time;
            sx += feature(order[k]);
        }
        mean_x = sx / static_cast<double>(to - from);
        return events / exposure;
    };
    double low_x = 0.0, high_x = 0.0;
    const double low_rate = group(0, q, low_x);
    const double high_rate = group(order.size() - q, order.size(), high_x);
    const double expected = std::exp(high_x - low_x);
    CHECK(high_rate / low_rate == doctest::Approx(expected).epsilon(0.15));
}

TEST_CASE("censoring is independent of the features without signal") {
    GeneratorConfig g = natural(2000, {0.0, 0.0, 0.0}, 0.3, 5);
    g.slope_signal_strength = 0.0;
    const Cohort c = simulate_cohort(g);
    std::vector<double> event, x;
    for (const auto& s : c.subjects) {
        event.push_back(s.label.event);
        x.push_back(s.timepoints.back()[0]);
    }
    CHECK(std::abs(correlation(event, x)) <= 0.05);
}

TEST_CASE("generator is deterministic and round trips through the fixture format") {
    GeneratorConfig g;
    g.n_subjects = 250;
    g.seed = 11;
    Cohort a = simulate_cohort(g), b = simulate_cohort(g);
    assign_splits(a, 4);
    assign_splits(b, 4);
    const fs::path pa = scratch("a"), pb = scratch("b");
    save_cohort(pa, a);
    save_cohort(pb, b);
    CHECK(read_file(pa / "cohort.json") == read_file(pb / "cohort.json"));
    CHECK(read_file(pa / "timepoints.f32") == read_file(pb / "timepoints.f32"));

    const Cohort loaded = load_cohort(pa);
    REQUIRE(loaded.subjects.size() == a.subjects.size());
    CHECK(loaded.oracle_c_index == a.oracle_c_index);
    for (std::size_t i = 0; i < a.subjects.size(); ++i) {
        const auto& x = a.subjects[i];
        const auto& y = loaded.subjects[i];
        CHECK(x.id == y.id);
        CHECK(x.centre == y.centre);
        CHECK(x.scan_times == y.scan_times);
        CHECK(x.label == y.label);
        CHECK(x.cause == y.cause);
        CHECK(x.split == y.split);
        CHECK(x.latent == y.latent);
        for (std::size_t t = 0; t < timepoint_count; ++t) CHECK(x.timepoints[t] == y.timepoints[t]);
    }
    fs::remove_all(pa);
    fs::remove_all(pb);
}

TEST_CASE("loading a missing or corrupt fixture is a data error") {
    const fs::path p = scratch("bad");
    CHECK_THROWS_AS(load_cohort(p), DataError);
    fs::create_directories(p);
    write_file(p / "cohort.json", "{not json");
    CHECK_THROWS_AS(load_cohort(p), DataError);
    fs::remove_all(p);
}

TEST_CASE("split assignment") {
    GeneratorConfig g;
    Cohort c = simulate_cohort(g);
    assign_splits(c, 2);
    std::map<SplitTag, std::size_t> size;
    std::map<SplitTag, std::size_t> ns;
    std::size_t internal_ns = 0, internal = 0;
    for (const auto& s : c.subjects) {
        CHECK(s.split != SplitTag::unassigned);
        CHECK((s.split == SplitTag::external_test) == (s.centre >= g.internal_centres));
        ++size[s.split];
        ns[s.split] += static_cast<std::size_t>(s.label.event);
        if (s.split != SplitTag::external_test) {
            ++internal;
            internal_ns += static_cast<std::size_t>(s.label.event);
        }
    }
    CHECK(size.size() == 7);
    std::size_t lo = SIZE_MAX, hi = 0;
    const double global = static_cast<double>(internal_ns) / static_cast<double>(internal);
    for (std::size_t f = 0; f < fold_count; ++f) {
        const auto tag = fold_tag(f);
        lo = std::min(lo, size[tag]);
        hi = std::max(hi, size[tag]);
        CHECK(std::abs(static_cast<double>(ns[tag]) / static_cast<double>(size[tag]) - global) <= 0.02);
    }
    CHECK(hi - lo <= 1);

    Cohort again = simulate_cohort(g);
    assign_splits(again, 2);
    for (std::size_t i = 0; i < c.subjects.size(); ++i) CHECK(again.subjects[i].split == c.subjects[i].split);

    GeneratorConfig tiny;
    tiny.n_subjects = 6;
    Cohort small = simulate_cohort(tiny);
    CHECK_THROWS_AS(assign_splits(small, 1), ArgumentError);
}

TEST_CASE("weighted sampler probabilities") {
    const std::vector<std::size_t> sizes{100, 50};
    auto s = WeightedSampler::from_class_sizes(sizes, 1);
    CHECK(s.probability(0) == doctest::Approx(1.0 / 200.0));
    CHECK(s.probability(149) == doctest::Approx(1.0 / 100.0));

    const std::vector<std::size_t> equal{30, 30};
    auto u = WeightedSampler::from_class_sizes(equal, 1);
    for (std::size_t i = 0; i < 60; ++i) CHECK(u.probability(i) == doctest::Approx(1.0 / 60.0));

    const std::vector<std::size_t> table{1436, 374, 344};
    auto t = WeightedSampler::from_class_sizes(table, 7);
    std::array<double, 3> freq{};
    const std::size_t draws = 100000;
    for (std::size_t i = 0; i < draws; ++i) {
        const std::size_t item = t.next();
        freq[item < 1436 ? 0 : item < 1810 ? 1 : 2] += 1.0 / static_cast<double>(draws);
    }
    for (double f : freq) CHECK(std::abs(f - 1.0 / 3.0) <= 0.01);

    const std::vector<std::size_t> empty{3, 0};
    CHECK_THROWS_AS(WeightedSampler::from_class_sizes(empty, 1), ArgumentError);
}

TEST_CASE("follow-up histogram") {
    Cohort none;
    none.subjects.resize(3);
    CHECK(followup_histogram(none, 100.0).empty());

    Cohort same;
    same.subjects.resize(4);
    for (auto& s : same.subjects) {
        s.label = {730.0, 1};
        s.cause = Cause::cardiac;
    }
    const auto one = followup_histogram(same, 365.0);
    CHECK(std::count_if(one.begin(), one.end(), [](std::size_t v) { return v > 0; }) == 1);
    CHECK(std::accumulate(one.begin(), one.end(), std::size_t{0}) == 4);

    GeneratorConfig g;
    g.n_subjects = 300;
    const Cohort c = simulate_cohort(g);
    const auto h = followup_histogram(c, 365.25);
    std::vector<std::size_t> direct(h.size(), 0);
    for (const auto& s : c.subjects) {
        if (s.label.event) ++direct.at(static_cast<std::size_t>(std::floor(s.label.time / 365.25)));
    }
    CHECK(h == direct);
}

TEST_CASE("volume fixtures render small volumes") {
    GeneratorConfig g;
    g.n_subjects = 30;
    g.mode = InputMode::volumes;
    g.volume_size = 8;
    const Cohort c = simulate_cohort(g);
    CHECK(c.item_shape() == Shape{1, 8, 8, 8});
    for (const auto& s : c.subjects) {
        for (const auto& t : s.timepoints) CHECK(t.all_finite());
    }
}
