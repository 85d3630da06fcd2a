#include "framr/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace framr::log {

void init_from_env() {
  auto logger = spdlog::get("framr");
  if (!logger) {
    logger = spdlog::stderr_logger_mt("framr");
    logger->set_pattern("[%l] %v");
  }
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("FRAMR_LOG");
  auto level = spdlog::level::warn;
  if (env != nullptr && *env != '\0') level = spdlog::level::from_str(env);
  spdlog::set_level(level);
}

}  // namespace framr::log
