// Strict JSON config reading: unknown keys and wrong types are errors that
// name the offending key.

#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include "unmix_gmm/io.hpp"
#include "unmix_gmm/synth.hpp"

namespace unmix_gmm::cli::config {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
    if (!j.is_object()) throw ValidationError(what + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
        if (!known) throw ValidationError(what + ": unknown key '" + key + "'");
    }
}

template <class T>
T get(const json& j, const std::string& key, const std::string& what) {
    if (!j.contains(key)) throw ValidationError(what + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(what + ": key '" + key + "' has the wrong type");
    }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& what) {
    return j.contains(key) ? get<T>(j, key, what) : fallback;
}

/// {"mode": "template"} or {"mode": "dirichlet", "concentration": c}.
inline AbundanceSource parse_abundance(const json& j, const std::string& what) {
    check_keys(j, {"mode", "concentration"}, what + " abundance");
    const auto mode = get<std::string>(j, "mode", what + " abundance");
    if (mode == "template") {
        if (j.contains("concentration")) {
            throw ValidationError(what + ": 'concentration' applies to dirichlet mode only");
        }
        return TemplateAbundances{};
    }
    if (mode == "dirichlet") {
        return DirichletAbundances{get_or<double>(j, "concentration", 1.0, what + " abundance")};
    }
    throw ValidationError(what + ": abundance mode must be 'template' or 'dirichlet', got '" + mode + "'");
}

inline json abundance_to_json(const AbundanceSource& source) {
    if (const auto* d = std::get_if<DirichletAbundances>(&source)) {
        return json{{"mode", "dirichlet"}, {"concentration", d->concentration}};
    }
    return json{{"mode", "template"}};
}

}  // namespace unmix_gmm::cli::config
