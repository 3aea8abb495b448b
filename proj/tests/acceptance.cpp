// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "cli.hpp"
#include "gradcheck.hpp"
#include "lcsurv/io.hpp"
#include "lcsurv/models.hpp"
#include "lcsurv/optimize.hpp"
#include "lcsurv/preproc.hpp"
#include "lcsurv/training.hpp"
#include "oracles.hpp"

using namespace lcsurv;
namespace fs = std::filesystem;
using cli::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "lcsurv_acceptance" / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

int invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "lcsurv");
    return cli::run(args);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        std::vector<std::string> row;
        std::istringstream ls(line);
        for (std::string f; std::getline(ls, f, ',');) row.push_back(f);
        rows.push_back(row);
    }
    return rows;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Outcome criterion1() {
    std::printf(
        "  note: the original screening cohort is access-restricted; no result here reproduces it.\n"
        "  note: every check below runs on synthetic fixtures and analytic oracles.\n");
    return {true, "non-reproducibility statement printed"};
}

Outcome criterion2() {
    const auto t0 = Clock::now();
    const int n = 20;
    double layers = 0.0, losses = 0.0;
    std::map<std::string, double> worst;
    const std::vector<std::pair<std::string, std::function<double(std::uint64_t)>>> layer_checks{
        {"dense", gradcheck::dense_instance},
        {"conv3d", gradcheck::conv3d_instance},
        {"batchnorm", gradcheck::batchnorm_instance},
        {"relu", gradcheck::relu_instance},
        {"dropout", gradcheck::dropout_instance},
        {"pool", gradcheck::pool_instance},
        {"residual", gradcheck::residual_instance},
        {"lstm", [](std::uint64_t s) { return gradcheck::recurrent_instance(CellKind::lstm, s); }},
        {"talstm", [](std::uint64_t s) { return gradcheck::recurrent_instance(CellKind::talstm, s); }},
        {"tlstm", [](std::uint64_t s) { return gradcheck::recurrent_instance(CellKind::tlstm, s); }},
    };
    for (const auto& [name, check] : layer_checks) {
        for (int s = 1; s <= n; ++s) worst[name] = std::max(worst[name], check(static_cast<std::uint64_t>(s)));
        layers = std::max(layers, worst[name]);
    }
    for (int s = 1; s <= n; ++s) {
        worst["cross_entropy"] = std::max(worst["cross_entropy"], gradcheck::cross_entropy_instance(s));
        worst["cox"] = std::max(worst["cox"], gradcheck::cox_instance(s));
    }
    losses = std::max(worst["cross_entropy"], worst["cox"]);
    const double elapsed = seconds_since(t0);
    std::string detail = std::to_string(n) + " instances per kind; layers max " + fmt("%.2e", layers) + ", losses max " +
                         fmt("%.2e", losses) + ", " + fmt("%.1f s", elapsed);
    for (const auto& [name, v] : worst) std::printf("  %-14s %.2e\n", name.c_str(), v);
    return {layers <= 1e-5 && losses <= 1e-6 && elapsed < 120.0, detail};
}

Outcome criterion3() {
    Rng rng(303);
    double worst = 0.0;
    std::size_t ties = 0, censored = 0;
    for (int c = 0; c < 50; ++c) {
        const std::size_t n = 2 + rng() % 29;
        const auto y = oracle::random_labels(n, rng, 0.3, 6);
        const auto h = oracle::random_vector(n, rng, 2.0);
        const CoxLoss got = cox_loss_and_grad(h, y);
        worst = std::max(worst, std::abs(got.loss - oracle::cox_loss(h, y)));
        const auto g = oracle::cox_grad(h, y);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(got.grad[i] - g[i]));
        worst = std::max(worst, std::abs(cox_loss(h, y) - oracle::cox_loss(h, y)));
        std::map<double, int> events_at;
        for (const auto& l : y) {
            censored += l.event == 0;
            if (l.event && ++events_at[l.time] == 2) ++ties;
        }
    }
    return {worst <= 1e-12 && ties > 0 && censored > 0,
            "50 cohorts, max |diff| " + fmt("%.2e", worst) + ", tied event times in " + std::to_string(ties) +
                " places, " + std::to_string(censored) + " censored"};
}

Outcome criterion4() {
    Rng rng(404);
    double worst = 0.0;
    int drawn = 0;
    for (int c = 0; c < 50; ++drawn) {
        const std::size_t n = 2 + rng() % 49;
        const auto y = oracle::random_labels(n, rng, 0.35);
        // Both indices are undefined without a comparable pair before tau; redraw.
        const double tau = oracle::largest_event_time(y);
        bool comparable = false;
        for (const auto& a : y) {
            for (const auto& b : y) comparable |= a.event && a.time < tau && b.time > a.time;
        }
        if (!comparable) continue;
        ++c;
        auto r = oracle::random_vector(n, rng);
        for (std::size_t i = 0; i + 1 < n; i += 5) r[i + 1] = r[i];  // risk ties
        worst = std::max(worst, std::abs(harrell_c(r, y) - oracle::harrell_c(r, y)));
        worst = std::max(worst, std::abs(ipcw_c(r, y) - oracle::ipcw_c(r, y, tau)));
    }
    std::size_t mismatches = 0, uncensored = 0;
    for (int c = 0; c < 50; ++c) {
        const std::size_t n = 2 + rng() % 49;
        const auto y = oracle::random_labels(n, rng, 0.0);
        const auto r = oracle::random_vector(n, rng);
        // With no censoring the weights are all one; the pairs are those with T_i < tau.
        const double tau = oracle::largest_event_time(y);
        std::vector<SurvivalLabel> restricted = y;
        for (auto& l : restricted) {
            if (l.time >= tau) l.event = 0;
        }
        bool comparable = false;
        for (const auto& a : restricted) {
            for (const auto& b : restricted) comparable |= a.event && b.time > a.time;
        }
        if (!comparable) continue;
        ++uncensored;
        if (ipcw_c(r, y) != harrell_c(r, restricted)) ++mismatches;
    }
    return {worst <= 1e-12 && mismatches == 0 && uncensored >= 40,
            "max |diff| vs brute force " + fmt("%.2e", worst) + " (50 cohorts, " + std::to_string(drawn - 50) +
                " degenerate draws skipped), uncensored ipcw != harrell in " + std::to_string(mismatches) + " of " +
                std::to_string(uncensored) + " cohorts"};
}

Outcome criterion5() {
    auto labels = [](std::initializer_list<std::pair<double, int>> v) {
        std::vector<SurvivalLabel> y;
        for (auto [t, e] : v) y.push_back({t, e});
        return y;
    };
    double hand = 0.0;
    const auto all = kaplan_meier(labels({{1, 1}, {2, 1}, {3, 1}}));
    hand = std::max({hand, std::abs(all(1) - 2.0 / 3.0), std::abs(all(2) - 1.0 / 3.0), std::abs(all(3))});
    const auto cens = kaplan_meier(labels({{1, 1}, {2, 0}, {3, 1}}));
    hand = std::max({hand, std::abs(cens(1) - 2.0 / 3.0), std::abs(cens(2.5) - 2.0 / 3.0), std::abs(cens(3)),
                     std::abs(cens(0.5) - 1.0)});
    const auto none = kaplan_meier(labels({{1, 0}, {2, 0}, {3, 0}}));
    hand = std::max({hand, std::abs(none(1) - 1.0), std::abs(none(3) - 1.0)});
    const auto tied = kaplan_meier(labels({{2, 1}, {2, 1}, {5, 0}}));
    hand = std::max({hand, std::abs(tied(2) - 1.0 / 3.0), std::abs(tied(6) - 1.0 / 3.0)});

    Rng rng(505);
    double empirical = 0.0;
    for (int c = 0; c < 20; ++c) {
        const auto y = oracle::random_labels(5 + rng() % 40, rng, 0.0);
        const auto km = kaplan_meier(y);
        for (double t = 0.0; t <= 100.0; t += 2.5) empirical = std::max(empirical, std::abs(km(t) - oracle::empirical_survival(t, y)));
    }
    // One rounding step of 1 - d/n is the only slack on the hand examples.
    return {hand <= 1e-15 && empirical <= 1e-12,
            "hand examples max |diff| " + fmt("%.1e", hand) + ", empirical survival max |diff| " + fmt("%.1e", empirical) +
                " over 20 cohorts"};
}

Outcome criterion6() {
    const auto t0 = Clock::now();
    GeneratorConfig g;
    g.n_subjects = 2000;
    g.true_beta = {0.5, -0.3, 0.8};
    g.baseline = BaselineKind::exponential;
    g.censor_rate = 0.3;
    g.class_ratio = 0.0;
    g.slope_signal_strength = 0.0;
    g.observation_noise = 0.0;
    g.seed = 606;
    const Cohort cohort = simulate_cohort(g);
    std::vector<Tensor> x;
    std::vector<SurvivalLabel> y;
    for (const auto& s : cohort.subjects) {
        x.push_back(s.timepoints.back());
        y.push_back(s.label);
    }
    const std::size_t n = x.size();
    double censored = 0.0;
    for (const auto& l : y) censored += l.event == 0;
    censored /= static_cast<double>(n);

    Dense head(3, 1);
    Rng rng(1);
    head.init(rng);
    OptimConfig oc;
    oc.momentum = 0.9;
    oc.weight_decay = 0.0;
    SgdOptimizer sgd(oc);
    ParamRefs refs{{"head.weight", &head.weight()}, {"head.bias", &head.bias()}};
    const std::size_t batch = 250, epochs = 60;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        const double lr = e < epochs / 2 ? 0.05 : 0.01;
        for (std::size_t b = 0; b + batch <= n; b += batch) {
            Tensor xb({batch, 3});
            std::vector<SurvivalLabel> yb;
            for (std::size_t k = 0; k < batch; ++k) {
                for (std::size_t j = 0; j < 3; ++j) xb[k * 3 + j] = x[order[b + k]][j];
                yb.push_back(y[order[b + k]]);
            }
            if (std::none_of(yb.begin(), yb.end(), [](const SurvivalLabel& l) { return l.event == 1; })) continue;
            zero_grads(refs);
            const Tensor risk = head.forward(xb);
            const CoxLoss loss = cox_loss_and_grad(risk.values(), yb);
            head.backward(Tensor({batch, 1}, loss.grad));
            sgd.step(refs, lr);
        }
    }
    std::vector<double> w(3);
    for (std::size_t j = 0; j < 3; ++j) w[j] = head.weight().value[j];
    double dot = 0.0, ww = 0.0, bb = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        dot += w[j] * g.true_beta[j];
        ww += w[j] * w[j];
        bb += g.true_beta[j] * g.true_beta[j];
    }
    const double cosine = dot / std::sqrt(ww * bb);
    // Least-squares positive scale onto the true coefficients.
    const double scale = std::max(dot / ww, 0.0);
    double coef_err = 0.0;
    for (std::size_t j = 0; j < 3; ++j) coef_err = std::max(coef_err, std::abs(scale * w[j] - g.true_beta[j]));
    std::vector<double> risk(n);
    for (std::size_t i = 0; i < n; ++i) risk[i] = head.forward(x[i])[0];
    const double c = harrell_c(risk, y);
    const double elapsed = seconds_since(t0);
    const bool ok = coef_err <= 0.10 && cosine >= 0.99 && std::abs(c - cohort.oracle_c_index) <= 0.02 && elapsed < 300.0;
    return {ok, "beta_hat (" + fmt("%.3f", w[0]) + ", " + fmt("%.3f", w[1]) + ", " + fmt("%.3f", w[2]) + "), scale " +
                    fmt("%.3f", scale) + ", max coef err " + fmt("%.3f", coef_err) + ", cosine " + fmt("%.4f", cosine) +
                    ", C " + fmt("%.3f", c) + " vs oracle " + fmt("%.3f", cohort.oracle_c_index) + ", censored " +
                    fmt("%.2f", censored) + ", " + fmt("%.1f s", elapsed)};
}

struct SlopeRun {
    double cnn_auc = 0.0;
    double crnn_auc = 0.0;
};

SlopeRun slope_run(std::uint64_t seed) {
    GeneratorConfig g;
    g.n_subjects = 600;
    g.true_beta = {0.0, 0.0, 0.0};
    g.slope_signal_strength = 0.25;
    g.observation_noise = 0.05;
    g.seed = seed;
    Cohort c = simulate_cohort(g);
    assign_splits(c, seed);
    ModelConfig mc;
    mc.input_shape = {3};
    auto in_train = [](const SubjectRecord& s) { return static_cast<int>(s.split) < 5 && s.split != SplitTag::fold1; };
    TaskData tr, va, te;
    for (const auto& s : c.subjects) {
        TaskData* d = in_train(s) ? &tr : s.split == SplitTag::fold1 ? &va : s.split == SplitTag::internal_test ? &te : nullptr;
        if (!d) continue;
        d->items.push_back(s.timepoints.back());
        d->classes.push_back(s.label.event);
    }
    Rng rng(seed);
    CnnModel cnn(mc);
    cnn.init(rng);
    TrainConfig tc;
    tc.epochs = 60;
    tc.seed = seed;
    tc.optim.lr_init = 0.01;
    train_cnn(cnn, tr, va, tc);
    SlopeRun out;
    out.cnn_auc = roc_auc(predict(cnn, te.items), te.classes);

    CrnnModel crnn(mc);
    crnn.init(rng);
    crnn.set_encoder(cnn);
    for (const auto& s : c.subjects) {
        TaskData* d = in_train(s) ? &tr : s.split == SplitTag::fold1 ? &va : s.split == SplitTag::internal_test ? &te : nullptr;
        if (!d) continue;
        const auto deltas = s.deltas();
        d->sequences.push_back(crnn.encode(s.timepoints, deltas));
    }
    train_crnn(crnn, tr, va, tc);
    out.crnn_auc = roc_auc(predict(crnn, te.sequences), te.classes);
    return out;
}

Outcome criterion7() {
    double gain = 0.0;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3}) {
        const SlopeRun r = slope_run(seed);
        gain += (r.crnn_auc - r.cnn_auc) / 3.0;
        detail += "seed " + std::to_string(seed) + ": cnn " + fmt("%.3f", r.cnn_auc) + " crnn " + fmt("%.3f", r.crnn_auc) + "; ";
    }
    return {gain >= 0.05, detail + "mean gain " + fmt("%.3f", gain)};
}

Outcome criterion8() {
    double cells = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        RecurrentCell lstm(CellKind::lstm, 4, 6), ta(CellKind::talstm, 4, 6), tl(CellKind::tlstm, 4, 6);
        lstm.init(rng);
        ta.init(rng);
        tl.init(rng);
        gradcheck::randomize(lstm.param("b").value, rng);
        for (const char* p : {"w_x", "w_h", "b"}) {
            ta.param(p).value = lstm.param(p).value;
            tl.param(p).value = lstm.param(p).value;
        }
        gradcheck::randomize(ta.param("w_d").value, rng);
        gradcheck::randomize(ta.param("b_d").value, rng);
        IntervalSequence seq, zero_dt;
        for (int t = 0; t < 5; ++t) {
            seq.features.push_back(Tensor::randn({4}, rng));
            seq.deltas.push_back(t == 0 ? 0.0 : std::uniform_real_distribution<>(30.0, 700.0)(rng));
        }
        zero_dt = seq;
        for (auto& d : zero_dt.deltas) d = 0.0;
        const Tensor ref = unroll(seq, lstm);
        // A zero interval makes the decay exactly one.
        cells = std::max(cells, max_abs_diff(unroll(zero_dt, ta), ref));
        tl.param("w_dt").value.zero();
        cells = std::max(cells, max_abs_diff(unroll(seq, tl), ref));
    }

    Rng rng(808);
    Dense a(5, 3), b(5, 3);
    a.init(rng);
    gradcheck::randomize(a.bias().value, rng);
    b.params() = a.params();
    const Tensor x = Tensor::randn({8, 5}, rng);
    const Tensor target = Tensor::randn({8, 3}, rng);
    OptimConfig oc;
    oc.sam_rho = 0.0;
    SamOptimizer sam(oc);
    SgdOptimizer sgd(oc);
    ParamRefs ra{{"w", &a.weight()}, {"b", &a.bias()}}, rb{{"w", &b.weight()}, {"b", &b.bias()}};
    auto loss = [&](Dense& d) {
        const Tensor out = d.forward(x);
        Tensor g(out.shape());
        double l = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double r = out[i] - target[i];
            l += 0.5 * r * r;
            g[i] = r;
        }
        d.backward(g);
        return l;
    };
    double opt = 0.0;
    for (int s = 0; s < 10; ++s) {
        sam.step(ra, [&] { return loss(a); }, 0.05);
        zero_grads(rb);
        loss(b);
        sgd.step(rb, 0.05);
        opt = std::max({opt, max_abs_diff(a.weight().value, b.weight().value), max_abs_diff(a.bias().value, b.bias().value)});
    }
    return {cells <= 1e-12 && opt <= 1e-12,
            "talstm/tlstm vs lstm max |diff| " + fmt("%.1e", cells) + " (20 sequences), SAM(0) vs SGD over 10 steps " +
                fmt("%.1e", opt)};
}

Outcome criterion9() {
    CtVolume v;
    v.voxels = Tensor({1, 1, 3}, {-1200.0, 600.0, 0.0});
    LungMask m({1, 1, 3});
    m.data = {1, 1, 0};
    const ByteVolume w = window_normalize_fill(v, m);
    const bool window_ok = w.data == std::vector<std::uint8_t>{0, 255, 170};

    const ThoraxPhantom ph = make_thorax_phantom();
    PreprocConfig cfg;
    cfg.target = {32, 64, 64};
    const PreprocResult r1 = preprocess_pipeline(ph.volume, cfg);
    const PreprocResult r2 = preprocess_pipeline(ph.volume, cfg);
    const double iou = mask_iou(r1.mask, ph.reference);
    auto hash = [](const Tensor& t) {
        return fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double)));
    };
    const bool stable = hash(r1.volume) == hash(r2.volume) && r1.mask == r2.mask;
    char h[32];
    std::snprintf(h, sizeof h, "%016llx", static_cast<unsigned long long>(hash(r1.volume)));
    return {window_ok && iou >= 0.99 && stable, std::string("window ") + (window_ok ? "ok" : "wrong") + ", phantom IoU " +
                                                    fmt("%.4f", iou) + ", volume hash " + h + (stable ? " (stable)" : " (UNSTABLE)")};
}

Outcome criterion10() {
    const fs::path train_fx = scratch("c10_train_fx"), small_fx = scratch("c10_fx"), run = scratch("c10_run");
    if (invoke({"generate", "--out", train_fx.string(), "--n", "300", "--seed", "10"}) != 0) return {false, "generate failed"};
    if (invoke({"generate", "--out", small_fx.string(), "--n", "30", "--seed", "11", "--class-ratio", "1"}) != 0) {
        return {false, "30-subject generate failed"};
    }
    for (const char* study : {"A", "B", "F"}) {
        if (invoke({"train", "--study", study, "--fixture", train_fx.string(), "--out", run.string(), "--epochs", "2"}) != 0) {
            return {false, std::string("train ") + study + " failed"};
        }
    }
    if (invoke({"bands", "--run", run.string(), "--fixture", small_fx.string()}) != 0) return {false, "bands failed"};

    // Oracle: mean of per-fold scores, two-step rule and per-band relabeling,
    // enumerated subject by subject.
    const Cohort cohort = load_cohort(small_fx);
    std::vector<std::size_t> all(cohort.subjects.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto mort = cli::fold_scores(run / "B", cohort, all, cli::study_spec('B'));
    const auto resp = cli::fold_scores(run / "F", cohort, all, cli::study_spec('F'));
    std::vector<int> predicted(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        double pm = 0.0, pr = 0.0;
        for (const auto& f : mort) pm += f[i] / static_cast<double>(mort.size());
        for (const auto& f : resp) pr += f[i] / static_cast<double>(resp.size());
        predicted[i] = pm < 0.5 ? 0 : (pr > 0.5 ? 2 : 1);
    }
    const auto rows = read_csv(run / "bands.csv");
    std::size_t mismatches = 0, cells = 0, relabeled = 0;
    const char* names[] = {"Survivor", "NS(Cardiac)", "NS(Respiratory)"};
    if (rows.size() != 4) return {false, "bands.csv has " + std::to_string(rows.size()) + " rows"};
    const double years[] = {3.0, 7.0, 11.0};
    for (int k = 0; k < 3; ++k) {
        if (rows[k + 1].size() != 10 || rows[k + 1][0] != names[k]) return {false, "unexpected bands.csv layout"};
        for (int b = 0; b < 3; ++b) {
            std::size_t cases = 0, tp = 0, neg = 0, tn = 0;
            for (std::size_t i = 0; i < all.size(); ++i) {
                const auto& s = cohort.subjects[i];
                int truth = 0;
                if (s.label.event == 1 && s.label.time < years[b] * 365.25) truth = s.cause == Cause::cardiac ? 1 : 2;
                if (k == 0 && b == 0 && s.label.event == 1 && truth == 0) ++relabeled;
                if (truth == k) {
                    ++cases;
                    tp += predicted[i] == k;
                } else {
                    ++neg;
                    tn += predicted[i] != k;
                }
            }
            auto cell = [](std::size_t num, std::size_t den) {
                if (den == 0) return std::string("NA");
                char buf[16];
                std::snprintf(buf, sizeof buf, "%.3f", static_cast<double>(num) / static_cast<double>(den));
                return std::string(buf);
            };
            const std::string expect[] = {std::to_string(cases), cell(tp, cases), cell(tn, neg)};
            for (int j = 0; j < 3; ++j) {
                ++cells;
                if (rows[k + 1][1 + 3 * b + j] != expect[j]) ++mismatches;
            }
        }
    }
    return {mismatches == 0 && relabeled > 0, std::to_string(cohort.subjects.size()) + " subjects, " + std::to_string(cells) +
                                                  " cells, " + std::to_string(mismatches) + " mismatches, " +
                                                  std::to_string(relabeled) + " deaths relabeled as survivors at 3 years"};
}

Outcome criterion11() {
    std::vector<std::string> ckpts, reports, logs;
    for (int rep = 0; rep < 2; ++rep) {
        // Same paths both times, so the recorded run configs can match too.
        const fs::path fx = scratch("c11_fx"), run = scratch("c11_run");
        if (invoke({"generate", "--out", fx.string(), "--n", "200", "--seed", "21", "--mode", "volumes", "--volume-size",
                    "16"}) != 0) {
            return {false, "generate failed"};
        }
        for (const char* study : {"A", "B"}) {
            if (invoke({"train", "--study", study, "--fixture", fx.string(), "--out", run.string(), "--epochs", "1",
                        "--folds", "0,1", "--width", "0.125", "--seed", "5"}) != 0) {
                return {false, std::string("train ") + study + " failed"};
            }
            if (invoke({"evaluate", "--study", study, "--fixture", fx.string(), "--run", run.string()}) != 0) {
                return {false, std::string("evaluate ") + study + " failed"};
            }
        }
        std::string c, r, l;
        for (const char* study : {"A", "B"}) {
            for (const char* f : {"fold1.ckpt", "fold2.ckpt"}) c += slurp(run / study / f);
            for (const char* f : {"fold1_steps.csv", "fold1_epochs.csv", "fold2_steps.csv", "run_config.json"}) l += slurp(run / study / f);
            json report = json::parse(slurp(run / study / "report.json"));
            report.erase("volatile");
            r += report.dump();
        }
        ckpts.push_back(c);
        reports.push_back(r);
        logs.push_back(l);
    }
    const bool same = ckpts[0] == ckpts[1] && reports[0] == reports[1] && logs[0] == logs[1];
    return {same, "checkpoints " + std::string(ckpts[0] == ckpts[1] ? "identical" : "differ") + " (" +
                      std::to_string(ckpts[0].size()) + " bytes), reports " + (reports[0] == reports[1] ? "identical" : "differ") +
                      ", logs " + (logs[0] == logs[1] ? "identical" : "differ")};
}

}  // namespace

int main() {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},  {5, criterion5},   {6, criterion6},
        {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}, {11, criterion11},
    };
    int failures = 0;
    for (const auto& [id, run] : criteria) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("criterion %2d: %s  %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
