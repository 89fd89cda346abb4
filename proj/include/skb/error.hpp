#pragma once

#include <stdexcept>
#include <string>

namespace skb {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AudioError : public Error {
 public:
  enum class Kind { unreadable, unsupported_encoding, malformed, too_short };
  AudioError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Transport or protocol failure talking to a vision-language backend.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool retryable, int http_status = 0)
      : Error(what), retryable_(retryable), http_status_(http_status) {}
  bool retryable() const noexcept { return retryable_; }
  int http_status() const noexcept { return http_status_; }

 private:
  bool retryable_;
  int http_status_;
};

/// Backend answered, but with nothing usable. Callers skip the sample.
class EmptyResponseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class SchemaVersionError : public Error {
 public:
  using Error::Error;
};

/// Similarity classification needs at least one stored pattern.
class EmptyKnowledgeBaseError : public Error {
 public:
  EmptyKnowledgeBaseError() : Error("knowledge base has no patterns") {}
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

}  // namespace skb
