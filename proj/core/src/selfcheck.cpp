#include "dier/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "dier/data.hpp"
#include "dier/diffusion.hpp"
#include "dier/grad_check.hpp"
#include "dier/ops.hpp"

namespace dier {

namespace {

SuiteResult check_autodiff(std::uint64_t seed) {
    SuiteResult result{"autodiff", true, ""};
    auto checks = run_op_grad_checks(seed, /*trials=*/5, /*tol=*/1e-4);
    double worst = 0;
    std::string worst_name;
    for (const auto& c : checks) {
        if (c.max_rel_err > worst) {
            worst = c.max_rel_err;
            worst_name = c.name;
        }
        if (!c.pass) result.pass = false;
    }
    std::ostringstream os;
    os << checks.size() << " ops, worst rel err " << worst << " (" << worst_name << ")";
    result.detail = os.str();
    return result;
}

SuiteResult check_schedule(std::uint64_t seed) {
    SuiteResult result{"schedule", true, ""};
    auto sched = make_linear_schedule(1000, 1e-4f, 0.02f);
    for (int t = 1; t < sched.timesteps; ++t) {
        if (!(sched.alpha_bars[t] < sched.alpha_bars[t - 1])) {
            result.pass = false;
            result.detail = "alpha_bar not strictly decreasing at t=" + std::to_string(t);
            return result;
        }
    }
    if (!(sched.alpha_bar(999) < 5e-5)) {
        result.pass = false;
        result.detail = "alpha_bar(999) too large";
        return result;
    }
    // Monte Carlo moments of q_sample on scalar draws.
    const double x0_val = 0.7;
    const int draws = 100000;
    double worst = 0;
    for (int t : {0, 111, 222, 333, 444, 555, 666, 777, 888, 999}) {
        Rng rng = Rng::derive(seed, "sched-mc", static_cast<std::uint64_t>(t) + 1);
        Tensor x0 = Tensor::full({draws}, static_cast<float>(x0_val));
        Tensor eps({draws});
        rng.fill_normal(eps.mut());
        Tensor xt = q_sample(x0, t, eps, sched);
        double m = 0, sq = 0;
        for (float v : xt.data()) {
            m += v;
            sq += static_cast<double>(v) * v;
        }
        m /= draws;
        const double sd = std::sqrt(std::max(sq / draws - m * m, 0.0));
        const double abar = sched.alpha_bar(t);
        const double want_m = std::sqrt(abar) * x0_val;
        const double want_sd = std::sqrt(1.0 - abar);
        const double em = std::abs(m - want_m) / want_sd;
        const double es = std::abs(sd - want_sd) / want_sd;
        worst = std::max({worst, em, es});
        if (em > 0.01 || es > 0.01) {
            result.pass = false;
        }
    }
    std::ostringstream os;
    os << "alpha_bar(999)=" << sched.alpha_bar(999) << ", worst moment err " << worst;
    result.detail = os.str();
    return result;
}

SuiteResult check_sampler(std::uint64_t seed) {
    SuiteResult result{"sampler", true, ""};
    auto sched = make_linear_schedule(1000, 1e-4f, 0.02f);
    Rng rng = Rng::derive(seed, "sampler");
    Tensor x0 = randn({2, 1, 8, 8}, rng);
    for (auto& v : x0.mut()) v = std::tanh(v);  // keep in [-1,1]
    Tensor eps_true = randn(x0.shape(), rng);
    Predictor oracle = [&eps_true](const Tensor&, int) { return eps_true; };
    double worst = 0;
    for (int steps : {2, 10, 50}) {
        auto grid = inversion_grid(sched.timesteps, steps);
        Tensor code = stochastic_encode(x0, oracle, grid, sched);
        std::vector<int> down(grid.rbegin(), grid.rend());
        Tensor back = sample_from_noise(code, oracle, down, sched, SampleMode::Ddim, nullptr);
        double err = 0;
        for (std::int64_t i = 0; i < x0.numel(); ++i) {
            err = std::max(err, std::abs(static_cast<double>(back.data()[i]) - x0.data()[i]));
        }
        worst = std::max(worst, err);
        if (err >= 1e-4) result.pass = false;
        // decode determinism
        Tensor again = sample_from_noise(code, oracle, down, sched, SampleMode::Ddim, nullptr);
        for (std::int64_t i = 0; i < back.numel(); ++i) {
            if (back.data()[i] != again.data()[i]) {
                result.pass = false;
                result.detail = "ddim decode is not bit-deterministic";
                return result;
            }
        }
    }
    std::ostringstream os;
    os << "exact-eps roundtrip worst abs err " << worst;
    result.detail = os.str();
    return result;
}

SuiteResult check_data_io(std::uint64_t seed, const std::string& scratch_dir) {
    SuiteResult result{"data-io", true, ""};
    namespace fs = std::filesystem;
    fs::create_directories(scratch_dir);
    auto set = synth_shapes(8, 4, 16, seed);
    const std::string img_path = (fs::path(scratch_dir) / "selfcheck-images-idx3-ubyte").string();
    const std::string lab_path = (fs::path(scratch_dir) / "selfcheck-labels-idx1-ubyte").string();
    write_idx(set, img_path, lab_path);
    auto back = read_idx(img_path, lab_path);
    if (back.images != set.images || back.labels != set.labels || back.height != set.height ||
        back.width != set.width) {
        result.pass = false;
        result.detail = "IDX roundtrip mismatch";
        return result;
    }
    auto prepped = preprocess(set, 16, false, seed);
    float lo = 1e9f, hi = -1e9f;
    for (float v : prepped.images.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (lo < -1.0f || hi > 1.0f) {
        result.pass = false;
        result.detail = "preprocessed values escape [-1,1]";
        return result;
    }
    result.detail = "IDX roundtrip + preprocessing bounds ok";
    return result;
}

}  // namespace

std::vector<SuiteResult> run_selfcheck(std::uint64_t seed, const std::string& scratch_dir) {
    std::vector<SuiteResult> results;
    results.push_back(check_autodiff(seed));
    results.push_back(check_schedule(seed));
    results.push_back(check_sampler(seed));
    results.push_back(check_data_io(seed, scratch_dir));
    return results;
}

}  // namespace dier
