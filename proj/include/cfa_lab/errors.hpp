#pragma once

#include <stdexcept>
#include <string>

namespace cfa_lab {

// Every failure raised by the library derives from Error so that callers
// (the CLI in particular) can report a single-line message with a category.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define CFA_LAB_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(tag, what) {}          \
  };

CFA_LAB_DEFINE_ERROR(DimensionError, "dimension")
CFA_LAB_DEFINE_ERROR(ConfigError, "config")
CFA_LAB_DEFINE_ERROR(NumericError, "numeric")
CFA_LAB_DEFINE_ERROR(PreconditionError, "precondition")
CFA_LAB_DEFINE_ERROR(GenerationError, "generation")
CFA_LAB_DEFINE_ERROR(TrainingError, "training")
CFA_LAB_DEFINE_ERROR(ProtocolError, "protocol")
CFA_LAB_DEFINE_ERROR(LoadError, "load")
CFA_LAB_DEFINE_ERROR(IoError, "io")
CFA_LAB_DEFINE_ERROR(DependencyError, "dependency")

#undef CFA_LAB_DEFINE_ERROR

}  // namespace cfa_lab
