#include "tcap/config.hpp"

#include <cmath>
#include <fstream>

#include "tcap/error.hpp"

namespace tcap {

using nlohmann::json;

void RunConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
    if (profiler.l_sens < 1) fail("l_sens must be >= 1");
    if (profiler.h_sens < 1) fail("h_sens must be >= 1");
    if (!(profiler.epsilon > 0.0)) fail("epsilon must be > 0");
    if (!(profiler.minority_weight_threshold > 0.0 && profiler.minority_weight_threshold < 1.0)) {
        fail("minority_weight_threshold must be in (0, 1)");
    }
    if (profiler.n_grid < 2) fail("n_grid must be >= 2");
    if (!(tau_vote >= 0.0 && tau_vote < 1.0)) fail("tau_vote must be in [0, 1)");
    if (!(em.ll_tol > 0.0)) fail("ll_tol must be > 0");
    if (em.max_iters < 1) fail("max_iters must be >= 1");
    if (em.n_init < 1) fail("n_init must be >= 1");
    if (!(em.variance_floor > 0.0)) fail("variance_floor must be > 0");
    if (em.max_components < 1 || em.max_components > gmm::kMaxComponents) fail("max_components must be in [1, 5]");
    if (ds.max_iters < 1) fail("ds_max_iters must be >= 1");
    if (!(ds.tol > 0.0)) fail("ds_tol must be > 0");
    if (!(ds.smoothing >= 0.0)) fail("ds_smoothing must be >= 0");
    if (!(mass_tolerance >= 0.0) || !std::isfinite(mass_tolerance)) fail("mass_tolerance must be >= 0");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["l_sens"] = c.profiler.l_sens;
    j["h_sens"] = c.profiler.h_sens;
    j["tau_vote"] = c.tau_vote;
    j["criterion"] = std::string(gmm::to_string(c.em.criterion));
    j["epsilon"] = c.profiler.epsilon;
    j["minority_weight_threshold"] = c.profiler.minority_weight_threshold;
    j["n_grid"] = c.profiler.n_grid;
    j["seed"] = c.seed;
    j["ll_tol"] = c.em.ll_tol;
    j["max_iters"] = c.em.max_iters;
    j["n_init"] = c.em.n_init;
    j["variance_floor"] = c.em.variance_floor;
    j["max_components"] = c.em.max_components;
    j["ds_max_iters"] = c.ds.max_iters;
    j["ds_tol"] = c.ds.tol;
    j["ds_smoothing"] = c.ds.smoothing;
    j["mass_tolerance"] = c.mass_tolerance;
    return j;
}

RunConfig config_from_json(const json& j, RunConfig c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "l_sens") c.profiler.l_sens = v.get<int>();
            else if (key == "h_sens") c.profiler.h_sens = v.get<int>();
            else if (key == "tau_vote") c.tau_vote = v.get<double>();
            else if (key == "criterion") c.em.criterion = gmm::parse_criterion(v.get<std::string>());
            else if (key == "epsilon") c.profiler.epsilon = v.get<double>();
            else if (key == "minority_weight_threshold") c.profiler.minority_weight_threshold = v.get<double>();
            else if (key == "n_grid") c.profiler.n_grid = v.get<int>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "ll_tol") c.em.ll_tol = v.get<double>();
            else if (key == "max_iters") c.em.max_iters = v.get<int>();
            else if (key == "n_init") c.em.n_init = v.get<int>();
            else if (key == "variance_floor") c.em.variance_floor = v.get<double>();
            else if (key == "max_components") c.em.max_components = v.get<int>();
            else if (key == "ds_max_iters") c.ds.max_iters = v.get<int>();
            else if (key == "ds_tol") c.ds.tol = v.get<double>();
            else if (key == "ds_smoothing") c.ds.smoothing = v.get<double>();
            else if (key == "mass_tolerance") c.mass_tolerance = v.get<double>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return c;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j, base);
}

}  // namespace tcap
