#pragma once

#include <stdexcept>
#include <string>

namespace ttfm {

// Every library failure derives from Error; code() is the stable tag the CLI
// prints in its machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define TTFM_DEFINE_ERROR(Name, tag)                                 \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(tag, what) {}     \
  };

TTFM_DEFINE_ERROR(ShapeError, "shape")
TTFM_DEFINE_ERROR(InsufficientData, "insufficient_data")
TTFM_DEFINE_ERROR(EstimationError, "estimation")
TTFM_DEFINE_ERROR(RankDeficient, "rank_deficient")
TTFM_DEFINE_ERROR(Infeasible, "infeasible")
TTFM_DEFINE_ERROR(DomainError, "domain")
TTFM_DEFINE_ERROR(IngestError, "ingest")
TTFM_DEFINE_ERROR(ConfigError, "config")
TTFM_DEFINE_ERROR(IoError, "io")

#undef TTFM_DEFINE_ERROR

}  // namespace ttfm
