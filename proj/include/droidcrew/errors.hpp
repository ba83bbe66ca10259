#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace droidcrew {

// Every failure the runtime can surface, one code per contract error.
enum class Err {
  // device
  InvalidParams,
  DeviceUnreachable,
  CaptureTimeout,
  ActionRejected,
  // gateway
  NoScriptMatch,
  EndpointError,
  ParseError,
  UnknownRun,
  // memory
  NoHypothesis,
  BudgetUnsatisfiable,
  DuplicateCommit,
  MissingDependencyCommit,
  // toolsmith
  ChainBreak,
  NotMinable,
  ReplayMismatch,
  MissingBinding,
  PreconditionMismatch,
  StepFailed,
  // expert
  EmptyDecomposition,
  BudgetExhausted,
  StepCapExceeded,
  // orchestrator
  EmptyRequirement,
  CyclicPlan,
  UnassignedNode,
  DeadlockDetected,
  RetryExhausted,
  // evalkit / cli
  ConfigError,
  EmptyTier,
  NoMilestones,
  JudgeUnavailable,
};

inline std::string_view err_name(Err e) {
  switch (e) {
    case Err::InvalidParams: return "InvalidParams";
    case Err::DeviceUnreachable: return "DeviceUnreachable";
    case Err::CaptureTimeout: return "CaptureTimeout";
    case Err::ActionRejected: return "ActionRejected";
    case Err::NoScriptMatch: return "NoScriptMatch";
    case Err::EndpointError: return "EndpointError";
    case Err::ParseError: return "ParseError";
    case Err::UnknownRun: return "UnknownRun";
    case Err::NoHypothesis: return "NoHypothesis";
    case Err::BudgetUnsatisfiable: return "BudgetUnsatisfiable";
    case Err::DuplicateCommit: return "DuplicateCommit";
    case Err::MissingDependencyCommit: return "MissingDependencyCommit";
    case Err::ChainBreak: return "ChainBreak";
    case Err::NotMinable: return "NotMinable";
    case Err::ReplayMismatch: return "ReplayMismatch";
    case Err::MissingBinding: return "MissingBinding";
    case Err::PreconditionMismatch: return "PreconditionMismatch";
    case Err::StepFailed: return "StepFailed";
    case Err::EmptyDecomposition: return "EmptyDecomposition";
    case Err::BudgetExhausted: return "BudgetExhausted";
    case Err::StepCapExceeded: return "StepCapExceeded";
    case Err::EmptyRequirement: return "EmptyRequirement";
    case Err::CyclicPlan: return "CyclicPlan";
    case Err::UnassignedNode: return "UnassignedNode";
    case Err::DeadlockDetected: return "DeadlockDetected";
    case Err::RetryExhausted: return "RetryExhausted";
    case Err::ConfigError: return "ConfigError";
    case Err::EmptyTier: return "EmptyTier";
    case Err::NoMilestones: return "NoMilestones";
    case Err::JudgeUnavailable: return "JudgeUnavailable";
  }
  return "?";
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}

  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void raise(Err code, const std::string& what) { throw Error(code, what); }

}  // namespace droidcrew
