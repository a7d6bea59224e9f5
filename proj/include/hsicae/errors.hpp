#pragma once

#include <stdexcept>
#include <string>

namespace hsicae {

// Base for every error the library raises. category() is the stable,
// machine-parsable name printed by the CLI.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}
    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define HSICAE_DEFINE_ERROR(Name)                                             \
    class Name : public Error {                                               \
    public:                                                                   \
        explicit Name(const std::string& what) : Error(#Name, what) {}        \
    }

HSICAE_DEFINE_ERROR(FormatError);
HSICAE_DEFINE_ERROR(DataError);
HSICAE_DEFINE_ERROR(ArgError);
HSICAE_DEFINE_ERROR(IoError);
HSICAE_DEFINE_ERROR(ShapeError);
HSICAE_DEFINE_ERROR(ConfigError);
HSICAE_DEFINE_ERROR(KSelectionError);
HSICAE_DEFINE_ERROR(ThresholdError);

#undef HSICAE_DEFINE_ERROR

class DivergedError : public Error {
public:
    DivergedError(const std::string& what, int epoch)
        : Error("DivergedError", what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

} // namespace hsicae
