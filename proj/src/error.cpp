#include "gradeshi/error.hpp"

namespace gradeshi {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::state: return "state";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::config: return "config";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::data: return "data";
    case ErrorKind::ingestion: return "ingestion";
    case ErrorKind::image: return "image";
    case ErrorKind::label: return "label";
    case ErrorKind::split: return "split";
    case ErrorKind::filter: return "filter";
    case ErrorKind::transfer: return "transfer";
    case ErrorKind::format: return "format";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::evaluation: return "evaluation";
    case ErrorKind::io: return "io";
    case ErrorKind::usage: return "usage";
    }
    return "unknown";
}

} // namespace gradeshi
