#include "scm/errors.hpp"

#include <sstream>

namespace scm {

Error::Error(ErrorKind kind, std::string module, const std::string& message,
             std::optional<int> block, std::string hint)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "[" << module << "]";
        if (block) os << " block " << *block + 1 << ":";
        os << " " << message;
        if (!hint.empty()) os << " (hint: " << hint << ")";
        return os.str();
      }()),
      kind_(kind),
      module_(std::move(module)),
      block_(block),
      hint_(std::move(hint)) {}

}  // namespace scm
