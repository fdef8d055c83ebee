#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "setrank/error.hpp"

namespace setrank {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a 64-bit over a file's bytes; cheap content fingerprint for manifests.
inline std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(errc::io, "cannot open " + path + " for digest");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize k = 0; k < n; ++k) {
      h ^= static_cast<unsigned char>(buf[k]);
      h *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  return h;
}

inline std::string digest_string(std::uint64_t h) {
  std::ostringstream out;
  out << "fnv1a64:" << std::hex << std::setfill('0') << std::setw(16) << h;
  return out.str();
}

// Provenance record written next to every artifact a subcommand produces.
struct RunManifest {
  std::string subcommand;
  nlohmann::ordered_json config;  // fully resolved flag values
  std::vector<std::string> input_paths;
  std::vector<std::string> output_paths;
  double wall_seconds = 0.0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tool"] = "setrank";
    j["version"] = kToolVersion;
    j["subcommand"] = subcommand;
    j["config"] = config;
    auto digests = [](const std::vector<std::string>& paths) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& p : paths) {
        nlohmann::ordered_json entry;
        entry["path"] = p;
        entry["digest"] = digest_string(fnv1a64_file(p));
        arr.push_back(entry);
      }
      return arr;
    };
    j["inputs"] = digests(input_paths);
    j["outputs"] = digests(output_paths);
    j["wall_seconds"] = wall_seconds;
    return j;
  }

  // Written as <artifact>.manifest.json beside the primary output.
  std::string write(const std::string& primary_output) const {
    const std::string path = primary_output + ".manifest.json";
    std::ofstream out(path);
    if (!out) throw error(errc::io, "cannot write " + path);
    out << to_json().dump(2) << "\n";
    return path;
  }
};

// Recomputes every digest recorded in a manifest file; throws on mismatch.
inline void verify_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw error(errc::io, "cannot open " + manifest_path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, true);
  for (const char* section : {"inputs", "outputs"}) {
    for (const auto& entry : j.at(section)) {
      const std::string path = entry.at("path");
      const std::string recorded = entry.at("digest");
      const std::string actual = digest_string(fnv1a64_file(path));
      if (recorded != actual)
        throw error(errc::invalid_argument,
                    "digest mismatch for " + path + ": " + recorded + " vs " + actual);
    }
  }
}

}  // namespace setrank
