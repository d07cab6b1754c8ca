#pragma once

#include <stdexcept>
#include <string>

namespace wfb {

// Every failure raised by the library carries a stable code string so the
// CLI can map error families to exit codes and tests can match on them.
enum class ErrorFamily { Input, Geometry, Support, Chart, Flow, Linear, Analysis, Io };

class Error : public std::runtime_error {
public:
    Error(ErrorFamily family, std::string code, const std::string& what)
        : std::runtime_error(code + ": " + what), family_(family), code_(std::move(code)) {}

    ErrorFamily family() const { return family_; }
    const std::string& code() const { return code_; }

private:
    ErrorFamily family_;
    std::string code_;
};

inline int exit_code_for(ErrorFamily f) {
    switch (f) {
        case ErrorFamily::Input: return 3;
        case ErrorFamily::Geometry: return 10;
        case ErrorFamily::Support: return 11;
        case ErrorFamily::Chart: return 12;
        case ErrorFamily::Flow: return 13;
        case ErrorFamily::Linear: return 14;
        case ErrorFamily::Analysis: return 15;
        case ErrorFamily::Io: return 16;
    }
    return 1;
}

}  // namespace wfb
