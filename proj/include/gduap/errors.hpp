#pragma once

#include <stdexcept>
#include <string>

namespace gduap {

// Base for every failure the library reports. `kind()` is the stable tag used
// in structured CLI error logs.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define GDUAP_DEFINE_ERROR(Name, tag)                         \
  class Name : public Error {                                 \
   public:                                                    \
    explicit Name(const std::string& what) : Error(what) {}   \
    const char* kind() const noexcept override { return tag; } \
  };

GDUAP_DEFINE_ERROR(InvalidInput, "invalid_input")
GDUAP_DEFINE_ERROR(CatalogError, "catalog")
GDUAP_DEFINE_ERROR(ContractError, "contract")
GDUAP_DEFINE_ERROR(IngestionError, "ingestion")
GDUAP_DEFINE_ERROR(ConfigError, "config")
GDUAP_DEFINE_ERROR(FormatError, "format")
GDUAP_DEFINE_ERROR(CurationError, "curation")
GDUAP_DEFINE_ERROR(UndefinedMetric, "undefined_metric")
GDUAP_DEFINE_ERROR(DegenerateSigma, "degenerate_sigma")

#undef GDUAP_DEFINE_ERROR

}  // namespace gduap
