#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lmexam {

enum class Errc {
  // taxonomy
  EmptyTaxonomy,
  DuplicatePath,
  SampleTooLarge,
  // provider
  MissingCredential,
  TransportFailure,
  CassetteMiss,
  NoRuleMatches,
  // promptkit
  UnboundPlaceholder,
  CountMismatch,
  NoItemsFound,
  MissingDimension,
  OutOfRange,
  AmbiguousChoice,
  EmptyQuestion,
  // exam
  GenerationParseFailure,
  DuplicateQuestion,
  EmptyGroundtruth,
  MissingTemplate,
  // analytics
  EmptyInput,
  UnknownModel,
  DegenerateMatrix,
  ZeroColumn,
  LengthMismatch,
  ConstantInput,
  JoinFailure,
  // peer
  UnqualifiedExaminer,
  // store
  SessionExists,
  SessionNotFound,
  CorruptLog,
  IntegrityViolation,
  MissingInputs,
  // shared
  PreconditionViolation,
  ConfigError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::EmptyTaxonomy: return "EmptyTaxonomy";
    case Errc::DuplicatePath: return "DuplicatePath";
    case Errc::SampleTooLarge: return "SampleTooLarge";
    case Errc::MissingCredential: return "MissingCredential";
    case Errc::TransportFailure: return "TransportFailure";
    case Errc::CassetteMiss: return "CassetteMiss";
    case Errc::NoRuleMatches: return "NoRuleMatches";
    case Errc::UnboundPlaceholder: return "UnboundPlaceholder";
    case Errc::CountMismatch: return "CountMismatch";
    case Errc::NoItemsFound: return "NoItemsFound";
    case Errc::MissingDimension: return "MissingDimension";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::AmbiguousChoice: return "AmbiguousChoice";
    case Errc::EmptyQuestion: return "EmptyQuestion";
    case Errc::GenerationParseFailure: return "GenerationParseFailure";
    case Errc::DuplicateQuestion: return "DuplicateQuestion";
    case Errc::EmptyGroundtruth: return "EmptyGroundtruth";
    case Errc::MissingTemplate: return "MissingTemplate";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::UnknownModel: return "UnknownModel";
    case Errc::DegenerateMatrix: return "DegenerateMatrix";
    case Errc::ZeroColumn: return "ZeroColumn";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ConstantInput: return "ConstantInput";
    case Errc::JoinFailure: return "JoinFailure";
    case Errc::UnqualifiedExaminer: return "UnqualifiedExaminer";
    case Errc::SessionExists: return "SessionExists";
    case Errc::SessionNotFound: return "SessionNotFound";
    case Errc::CorruptLog: return "CorruptLog";
    case Errc::IntegrityViolation: return "IntegrityViolation";
    case Errc::MissingInputs: return "MissingInputs";
    case Errc::PreconditionViolation: return "PreconditionViolation";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

// All domain failures surface as this exception; `code()` identifies the kind.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(Errc::PreconditionViolation, what);
}

}  // namespace lmexam
