#ifndef GRADESHI_ERROR_HPP
#define GRADESHI_ERROR_HPP

#include <stdexcept>
#include <string>

namespace gradeshi {

// Every failure raised by the library derives from Error. The kind tag lets
// the CLI map failures onto exit codes without a chain of catch clauses.
enum class ErrorKind {
    shape,
    state,
    parameter,
    config,
    numeric,
    data,
    ingestion,
    image,
    label,
    split,
    filter,
    transfer,
    format,
    integrity,
    evaluation,
    io,
    usage,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

template <ErrorKind K>
class TaggedError : public Error {
public:
    explicit TaggedError(const std::string& what) : Error(K, what) {}
};

using ShapeError = TaggedError<ErrorKind::shape>;
using StateError = TaggedError<ErrorKind::state>;
using ParameterError = TaggedError<ErrorKind::parameter>;
using ConfigError = TaggedError<ErrorKind::config>;
using NumericError = TaggedError<ErrorKind::numeric>;
using DataError = TaggedError<ErrorKind::data>;
using IngestionError = TaggedError<ErrorKind::ingestion>;
using ImageError = TaggedError<ErrorKind::image>;
using LabelError = TaggedError<ErrorKind::label>;
using SplitError = TaggedError<ErrorKind::split>;
using FilterError = TaggedError<ErrorKind::filter>;
using TransferError = TaggedError<ErrorKind::transfer>;
using FormatError = TaggedError<ErrorKind::format>;
using IntegrityError = TaggedError<ErrorKind::integrity>;
using EvaluationError = TaggedError<ErrorKind::evaluation>;
using IoError = TaggedError<ErrorKind::io>;
using UsageError = TaggedError<ErrorKind::usage>;

} // namespace gradeshi

#endif
