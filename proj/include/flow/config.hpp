#pragma once

#include <map>
#include <string>
#include <vector>

#include "flow/common.hpp"

namespace flow {

enum class Provenance { fallback, file, flag };

std::string to_string(Provenance p);

// Plain-text `key = value` configuration with per-key provenance. Later
// sources override earlier ones; the manifest dump parses back as a config
// file, so a run can be reproduced from its manifest alone.
class KeyValueConfig {
  public:
    void set(const std::string& key, const std::string& value, Provenance prov);
    // `# comments` and blank lines allowed; anything else without '=' is an
    // error naming the offending line
    void load_file(const std::string& path);
    // "key=value" tokens from the command line
    void apply_flag(const std::string& assignment);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback);
    int get_int(const std::string& key, int fallback);
    double get_double(const std::string& key, double fallback);
    bool get_bool(const std::string& key, bool fallback);

    // keys that were set but never read; catches misspelled config entries
    std::vector<std::string> unread_keys() const;

    std::string to_text(bool with_provenance) const;

  private:
    struct Entry {
        std::string value;
        Provenance prov = Provenance::fallback;
        bool read = false;
    };
    std::map<std::string, Entry> values_;
};

struct RunManifest {
    std::string command;
    std::string profile;       // test64 | fast32
    std::string git_describe;
    uint64_t seed = 0;
    std::vector<std::string> notes;  // e.g. norm substitutions
    std::string resolved_config;     // KeyValueConfig::to_text(true)

    void write(const std::string& path) const;
};

}  // namespace flow
