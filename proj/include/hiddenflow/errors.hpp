#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hiddenflow {

/// Base of every error raised by the library. Callers that only need a
/// diagnostic can catch this; the CLI maps it to exit status 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define HIDDENFLOW_DEFINE_ERROR(Name)        \
    class Name : public Error {              \
    public:                                  \
        using Error::Error;                  \
    };

// trace-codec
HIDDENFLOW_DEFINE_ERROR(MalformedHeader)
HIDDENFLOW_DEFINE_ERROR(TruncatedRecord)
HIDDENFLOW_DEFINE_ERROR(UnresolvedHost)

// signature
HIDDENFLOW_DEFINE_ERROR(EmptyTraceSet)

// sigtree
HIDDENFLOW_DEFINE_ERROR(NodeAlreadyVisited)

// simnet
HIDDENFLOW_DEFINE_ERROR(SchemaError)
HIDDENFLOW_DEFINE_ERROR(GuardCycle)
HIDDENFLOW_DEFINE_ERROR(UnknownFlowRef)
HIDDENFLOW_DEFINE_ERROR(UnresolvedDomain)

// profiler
HIDDENFLOW_DEFINE_ERROR(RootFailed)
HIDDENFLOW_DEFINE_ERROR(DriverError)

#undef HIDDENFLOW_DEFINE_ERROR

/// Rule-file parse failure. `line()` is 1-based.
class SyntaxError : public Error {
public:
    SyntaxError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace hiddenflow
