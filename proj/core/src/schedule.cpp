#include "dier/schedule.hpp"

#include <string>

namespace dier {

NoiseSchedule make_linear_schedule(int timesteps, float beta_start, float beta_end) {
    if (timesteps < 1) {
        throw ConfigError("schedule needs timesteps >= 1, got " + std::to_string(timesteps));
    }
    if (!(beta_start > 0.0f) || !(beta_start <= beta_end) || !(beta_end < 1.0f)) {
        throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1, got [" +
                          std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
    }
    NoiseSchedule s;
    s.timesteps = timesteps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(static_cast<std::size_t>(timesteps));
    s.alphas.resize(static_cast<std::size_t>(timesteps));
    s.alpha_bars.resize(static_cast<std::size_t>(timesteps));
    double bar = 1.0;
    for (int t = 0; t < timesteps; ++t) {
        const float b =
            timesteps == 1
                ? beta_start
                : beta_start + (beta_end - beta_start) * static_cast<float>(t) /
                                   static_cast<float>(timesteps - 1);
        s.betas[static_cast<std::size_t>(t)] = b;
        s.alphas[static_cast<std::size_t>(t)] = 1.0f - b;
        bar *= 1.0 - static_cast<double>(b);
        s.alpha_bars[static_cast<std::size_t>(t)] = static_cast<float>(bar);
    }
    return s;
}

}  // namespace dier
