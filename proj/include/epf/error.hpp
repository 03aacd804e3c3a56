#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace epf {

// Failure categories map onto CLI exit codes: data problems exit 2,
// numeric/convergence problems exit 3.
enum class ErrorCategory { usage, data, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::usage, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

class ParseError : public DataError {
public:
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

#define EPF_DATA_ERROR(Name)                                                 \
    class Name : public DataError {                                          \
    public:                                                                  \
        explicit Name(const std::string& what) : DataError(what) {}          \
    }

EPF_DATA_ERROR(CadenceError);
EPF_DATA_ERROR(SchemaError);
EPF_DATA_ERROR(CalendarError);
EPF_DATA_ERROR(SplitError);
EPF_DATA_ERROR(SliceError);
EPF_DATA_ERROR(FeatureError);
EPF_DATA_ERROR(TransformError);
EPF_DATA_ERROR(ShapeError);
EPF_DATA_ERROR(CombineError);
EPF_DATA_ERROR(MetricError);
EPF_DATA_ERROR(LookaheadError);

#undef EPF_DATA_ERROR

class TransportError : public DataError {
public:
    TransportError(const std::string& url, long status, const std::string& detail)
        : DataError("download of " + url + " failed (status " + std::to_string(status) +
                    "): " + detail),
          url_(url),
          status_(status) {}

    const std::string& url() const noexcept { return url_; }
    long status() const noexcept { return status_; }

private:
    std::string url_;
    long status_;
};

class DivergenceError : public NumericError {
public:
    DivergenceError(int epoch, const std::string& what)
        : NumericError("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class DegenerateError : public NumericError {
public:
    explicit DegenerateError(const std::string& what) : NumericError(what) {}
};

class ConditioningError : public NumericError {
public:
    explicit ConditioningError(const std::string& what) : NumericError(what) {}
};

}  // namespace epf
