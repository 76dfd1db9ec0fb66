#ifndef SIGBANDIT_CLI_HPP
#define SIGBANDIT_CLI_HPP

#include <map>
#include <string>
#include <vector>

#include "sigbandit/experiments.hpp"
#include "sigbandit/training.hpp"

namespace sigbandit::cli {

// Plain-text config: one `key = value` per line, '#' comments. Dotted keys
// express nesting. Unknown keys are rejected by the consuming view.
struct ConfigMap {
  std::vector<std::pair<std::string, std::string>> entries;  // file order, for echoes
  std::string raw_text;

  const std::string* get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);  // overrides win
};

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::string& path);
// each override is "key=value"
void apply_overrides(ConfigMap& cfg, const std::vector<std::string>& sets);

// The consuming views: reject any key they do not understand, naming it.
train::TrainConfig train_config_from(const ConfigMap& cfg);
exp::SweepSpec sweep_spec_from(const ConfigMap& cfg, int experiment);

// default output root: --out flag, else SIGBANDIT_OUT, else ./runs
std::string default_out_root();

// exit status 0 on success
int dispatch(const std::vector<std::string>& args);

}  // namespace sigbandit::cli

#endif
