#ifndef NESY_CLI_HPP
#define NESY_CLI_HPP

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nesy/trainer.hpp"

namespace nesy {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDivergence = 3;

/// Defaults, then the config file text, then flag overrides (in order).
TrainConfig resolve_config(const std::optional<std::string>& config_text,
                           const std::vector<std::pair<std::string, std::string>>& overrides);

/// Value domains a built-in task needs (digit 0..9 for the digit tasks).
ValueDomains task_domains(const std::string& task);

/// Ablation variants as (name, alpha, beta, gamma): full, -SRM, -NRM, -OI.
struct AblationVariant {
    std::string name;
    double alpha, beta, gamma;
};
const std::vector<AblationVariant>& ablation_variants();

/// Entry point of the `nesy` tool. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace nesy

#endif // NESY_CLI_HPP
