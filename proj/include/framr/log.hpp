#pragma once

namespace framr::log {

/// Configures the default spdlog logger from the FRAMR_LOG environment
/// variable (trace|debug|info|warn|error|off; default warn). Logs go to stderr.
void init_from_env();

}  // namespace framr::log
