// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
//
//   acceptance --work-dir DIR [--only 1,2,5]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ceseg/commands.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace ceseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    std::function<Outcome(const fs::path&)> run;
};

std::string num(double v, int digits = 4) { return fmt_number(v, digits); }

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

// --- 1 ---------------------------------------------------------------------------

Outcome distance_identity(const fs::path&) {
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    double worst = 0;
    bool finite = true;
    for (int i = 0; i < 10000; ++i) {
        const double s = u(rng);
        const double naive = 1.0 - 2.0 / (1.0 + std::exp(s));
        const double d = embedding_distance(s);
        finite &= std::isfinite(d);
        worst = std::max(worst, std::abs(naive - d));
    }
    // The implementation path never evaluates exp(s), so huge s stays finite.
    for (double s : {1e3, 1e6, 1e300, std::numeric_limits<double>::max()}) finite &= embedding_distance(s) == 1.0;
    finite &= std::isfinite(embedding_distance(std::numeric_limits<float>::max()));
    return {worst < 1e-12 && finite,
            "max |naive - tanh(s/2)| = " + sci(worst) + " over 10^4 draws (tol 1e-12); huge s finite: " +
                (finite ? "yes" : "no")};
}

// --- 2 ---------------------------------------------------------------------------

Outcome matching_oracle(const fs::path&) {
    std::mt19937_64 rng(777);
    std::uniform_int_distribution<std::size_t> side(1, 16), chans(1, 4), count(1, 3);
    std::uniform_int_distribution<int> radius(0, 3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t pixels = 0, mismatches = 0, bad_arg = 0;
    for (int t = 0; t < 200; ++t) {
        const Shape s{chans(rng), count(rng), side(rng), side(rng)};
        const int k = radius(rng);
        const auto e = testing::random_tensor<float>(s, rng);
        const auto nb = testing::random_tensor<float>(s, rng);
        Tensor<float> prob(1, s.count, s.height, s.width);
        const double dens = u(rng);
        for (auto& v : prob.values()) v = float(u(rng) < dens ? 0.5 + 0.5 * u(rng) : 0.5 * u(rng));
        const auto got = neighboring_matching(e, nb, prob, k, 0.5);
        const auto want = testing::brute_force_matching<float>(e, nb, prob, k, 0.5);
        for (std::size_t i = 0; i < got.distance.size(); ++i) {
            ++pixels;
            if (got.distance[i] != want.distance[i]) ++mismatches;
            if ((got.argmin[i] < 0) != (want.argmin[i] < 0)) ++bad_arg;
        }
    }
    return {mismatches == 0 && bad_arg == 0, "200 instances, " + std::to_string(pixels) + " pixels, " +
                                                 std::to_string(mismatches) + " distance mismatches, " +
                                                 std::to_string(bad_arg) + " organ/no-organ disagreements"};
}

// --- 3 ---------------------------------------------------------------------------

Outcome gradient_check(const fs::path&) {
    const ModelConfig cfg;  // default widths; 16x16 fits the three pooling stages
    SegmentationModel<double> m(cfg, Variant::ce, 11);
    std::mt19937_64 rng(12);
    // Perturb the initialisation so the check is not tied to the initial state.
    std::normal_distribution<double> g(0.0, 0.02);
    m.visit([&](nn::Parameter<double>& p) {
        if (p.learnable)
            for (auto& v : p.value) v += g(rng);
    });
    const auto x = testing::random_tensor<double>({1, 2, 16, 16}, rng);
    Tensor<double> y(1, 2, 16, 16);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t r = 4; r < 12; ++r)
            for (std::size_t c = 5 + n; c < 13 + n; ++c) y.at(0, n, r, c) = 1.0;
    testing::GradCheckOptions opt;
    opt.step = 1e-3;
    const auto results = testing::check_gradients(m, x, y, opt);
    bool ok = results.size() == 5;
    std::string detail = "double precision, step 1e-3, tol 1e-4:";
    for (const auto& r : results) {
        ok &= r.rel_error < 1e-4 && r.informative > 0;
        detail += " " + std::string(to_string(r.group)) + "=" + sci(r.rel_error) + " (" +
                  std::to_string(r.checked) + " checked, " + std::to_string(r.skipped) + " kinks skipped)";
    }
    return {ok, detail};
}

// --- 4 ---------------------------------------------------------------------------

Outcome metrics_oracle(const fs::path&) {
    std::mt19937_64 rng(4242);
    std::uniform_int_distribution<std::size_t> side(2, 16);
    std::size_t exact = 0, scaled = 0;
    for (int t = 0; t < 50; ++t) {
        const Dims d{side(rng), side(rng), side(rng)};
        const Spacing sp{1.0, 0.5, 2.0};
        const auto a = t % 2 ? testing::random_blob_mask(d, sp, rng) : testing::random_mask(d, sp, 0.1, rng);
        const auto b = t % 3 ? testing::random_blob_mask(d, sp, rng) : testing::random_mask(d, sp, 0.1, rng);
        const auto slow = testing::brute_force_surface_distances(a, b, sp);
        const bool same = pooled_surface_distances(a, b, sp) == slow && assd(a, b, sp) == mean_of(slow) &&
                          hd95(a, b, sp) == percentile(slow, 95.0);
        exact += same;
        // Power-of-two factors keep every product exact.
        const double alpha = std::ldexp(1.0, t % 5 - 2);
        const Spacing big{alpha * sp.x, alpha * sp.y, alpha * sp.z};
        const auto base = pooled_surface_distances(a, b, sp), grown = pooled_surface_distances(a, b, big);
        bool scales = base.size() == grown.size() && hd95(a, b, big) == alpha * hd95(a, b, sp);
        for (std::size_t i = 0; scales && i < base.size(); ++i) scales = grown[i] == alpha * base[i];
        scaled += scales;
    }
    return {exact == 50 && scaled == 50, std::to_string(exact) + "/50 pairs equal the all-pairs oracle exactly, " +
                                             std::to_string(scaled) + "/50 scale exactly with spacing"};
}

// --- 5 ---------------------------------------------------------------------------

Outcome ab_experiment(const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path root = work / "ab";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig data_rc;
    data_rc.phantom = PhantomSpec{};  // 30 volumes of 32x64x64
    data_rc.paths.data_dir = (root / "data").string();
    std::ofstream gen_log(root / "gen_data.log");
    const auto manifest = cmd_gen_data(data_rc, 0, gen_log).front();

    struct Run {
        std::string variant;
        std::uint64_t seed;
        double dsc = 0, hd95 = 0;
        std::size_t hd_n = 0, cases = 0;
        int best_epoch = 0;
    };
    std::vector<Run> runs;
    for (std::uint64_t seed : {0, 1, 2})
        for (const char* v : {"baseline", "ce"}) runs.push_back({v, seed});

    parallel_for(runs.size(), worker_count(), [&](std::size_t i) {
        Run& r = runs[i];
        RunConfig rc;
        rc.train = profile_defaults(Profile::desk_scale);
        rc.train.seed = r.seed;
        rc.train.variant = r.variant;
        rc.paths.manifest = manifest.string();
        rc.paths.out_dir = (root / (r.variant + "_" + std::to_string(r.seed))).string();
        fs::create_directories(rc.paths.out_dir);
        std::ofstream log(fs::path(rc.paths.out_dir) / "run.log");
        const auto tr = cmd_train(rc, false, log);
        const auto report = cmd_eval(rc, Split::test, log);
        r.best_epoch = tr.best_epoch;
        r.cases = report.per_case.size();
        r.dsc = report.aggregate(Metric::dsc).mean;
        const auto h = report.aggregate(Metric::hd95);
        r.hd95 = h.mean;
        r.hd_n = h.n;
    });

    double dsc[2] = {0, 0}, hd[2] = {0, 0};
    std::string detail;
    for (const auto& r : runs) {
        const int k = r.variant == "ce";
        dsc[k] += r.dsc / 3.0;
        hd[k] += r.hd95 / 3.0;
        detail += r.variant + "/seed" + std::to_string(r.seed) + ": DSC " + num(r.dsc, 2) + " 95HD " +
                  num(r.hd95, 2) + " (" + std::to_string(r.hd_n) + "/" + std::to_string(r.cases) +
                  " cases with surfaces, best epoch " + std::to_string(r.best_epoch) + "); ";
    }
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    const bool dsc_ok = dsc[1] - dsc[0] >= 0.5;
    const bool hd_ok = hd[1] <= 1.05 * hd[0];
    detail += "mean DSC baseline " + num(dsc[0], 2) + " vs ce " + num(dsc[1], 2) + " (gain " + num(dsc[1] - dsc[0], 2) +
              ", need >= 0.50); mean 95HD baseline " + num(hd[0], 2) + " vs ce " + num(hd[1], 2) + " (ratio " +
              num(hd[0] > 0 ? hd[1] / hd[0] : 0.0, 3) + ", need <= 1.050); wall " + num(minutes, 1) + " min on " +
              std::to_string(worker_count()) + " worker thread(s), budget 45 min on a multicore host";
    return {dsc_ok && hd_ok, detail};
}

// --- 6 ---------------------------------------------------------------------------

Outcome parameter_overhead(const fs::path&) {
    SegmentationModel<float> m(ModelConfig{}, Variant::ce, 0);
    const auto c = count_parameters(m);
    const double ratio = double(c.ce_block) / double(c.backbone);
    std::string groups;
    for (const auto& [name, n] : c.groups) groups += " " + name + "=" + std::to_string(n);
    return {ratio < 0.05, "backbone " + std::to_string(c.backbone) + ", ce_block " + std::to_string(c.ce_block) +
                              ", total " + std::to_string(c.total) + ", ratio " + num(100 * ratio, 2) +
                              "% (need < 5%);" + groups};
}

// --- 7 ---------------------------------------------------------------------------

/// Channel-major copy of slice n of a (C, N, H, W) tensor as a 1-slice tensor.
Tensor<float> take_slice(const Tensor<float>& t, std::size_t n) {
    Tensor<float> out(t.channels(), 1, t.height(), t.width());
    for (std::size_t c = 0; c < t.channels(); ++c)
        for (std::size_t y = 0; y < t.height(); ++y)
            for (std::size_t x = 0; x < t.width(); ++x) out.at(c, 0, y, x) = t.at(c, n, y, x);
    return out;
}

Outcome neighbour_rule(const fs::path&) {
    ModelConfig cfg;
    cfg.l = 1;
    SegmentationModel<float> m(cfg, Variant::ce, 3);
    auto spec = PhantomSpec{};
    spec.depth = 6;
    spec.extent_min = spec.extent_max = 1.0;
    const auto c = generate_phantom_case(spec, 0);
    const auto x = slice_stack<float>(preprocess_mr(c.image), 0, 6);
    const auto out = ce_forward(m, x);
    const std::vector<std::size_t> expected{1, 0, 1, 2, 3, 4};
    bool ok = out.ce->neighbors == expected;
    // Recompute each slice's distance map against the expected neighbour
    // with the brute-force matcher; the block must have used that slice.
    std::size_t agree = 0;
    for (std::size_t n = 0; n < 6; ++n) {
        const auto want = testing::brute_force_matching<float>(
            take_slice(out.ce->embedding, n), take_slice(out.ce->embedding, expected[n]),
            take_slice(out.original, expected[n]), cfg.k, cfg.fg_threshold);
        const auto got = take_slice(out.ce->distance, n);
        agree += want.distance.values().size() == got.values().size() &&
                 std::equal(got.values().begin(), got.values().end(), want.distance.values().begin());
    }
    ok &= agree == 6;
    std::string seen;
    for (auto v : out.ce->neighbors) seen += (seen.empty() ? "" : ",") + std::to_string(v);
    return {ok, "6-slice stack, l=1: neighbours [" + seen + "] (expected [1,0,1,2,3,4]); " + std::to_string(agree) +
                    "/6 distance maps match matching against the expected neighbour"};
}

// --- 8 ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string log_without_wall_time(const fs::path& p) {
    std::string out;
    for (auto r : detail::read_log(p)) {
        r.wall_s = 0;
        out += to_json(r).dump() + "\n";
    }
    return out;
}

Outcome determinism(const fs::path& work) {
    ::setenv("CESEG_THREADS", "1", 1);
    const fs::path root = work / "determinism";
    fs::remove_all(root);
    RunConfig rc;
    rc.model.depth = 2;
    rc.model.base_channels = 8;
    rc.phantom.n_cases = 5;
    rc.phantom.depth = 12;
    rc.phantom.height = rc.phantom.width = 32;
    rc.phantom.radius_min = 4;
    rc.phantom.radius_max = 8;
    rc.phantom.drift_amplitude = 2;
    rc.phantom.distractor_radius = 3;
    rc.train = profile_defaults(Profile::desk_scale);
    rc.train.epochs = 3;
    rc.train.seed = 9;
    rc.paths.data_dir = (root / "data").string();
    std::ofstream log(root.string() + "_log.txt");
    cmd_gen_data(rc, 0, log);
    // Same config, same output directory; the first run's artefacts are moved aside.
    rc.paths.out_dir = (root / "run").string();
    cmd_train(rc, false, log);
    fs::rename(root / "run", root / "a");
    cmd_train(rc, false, log);
    fs::rename(root / "run", root / "b");
    ::unsetenv("CESEG_THREADS");
    std::size_t same = 0, total = 0;
    std::string differing;
    for (const char* f : {"best.ckpt", "last.ckpt", "run_config.json", "parameters.json"}) {
        ++total;
        if (slurp(root / "a" / f) == slurp(root / "b" / f)) ++same;
        else differing += std::string(" ") + f;
    }
    ++total;
    const bool logs = log_without_wall_time(root / "a" / "train_log.jsonl") ==
                      log_without_wall_time(root / "b" / "train_log.jsonl");
    same += logs;
    if (!logs) differing += " train_log.jsonl";
    return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                               " artefacts byte-identical across two single-threaded runs (log compared without "
                               "wall_s)" +
                               (differing.empty() ? "" : "; differing:" + differing)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string work = "acceptance_work";
    std::vector<int> only;
    app.add_option("--work-dir", work, "scratch directory");
    app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "distance stability identity", distance_identity},
        {2, "matching equals brute-force oracle", matching_oracle},
        {3, "end-to-end gradient check", gradient_check},
        {4, "surface metrics equal brute-force oracle", metrics_oracle},
        {5, "desk-scale A/B experiment", ab_experiment},
        {6, "parameter overhead", parameter_overhead},
        {7, "first-slice neighbour rule", neighbour_rule},
        {8, "training determinism", determinism},
    };
    fs::create_directories(work);
    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run(work);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s [%d] %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), s,
                    o.detail.c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed ? 1 : 0;
}
