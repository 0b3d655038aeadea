#pragma once

#include <stdexcept>
#include <string>

namespace record {

/// Base of every error raised by the library. `kind()` is the stable,
/// machine-readable name used in error ledgers and CLI output.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

protected:
    struct Raw {};
    Error(Raw, std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

private:
    std::string kind_;
};

#define RECORD_DEFINE_ERROR(Name)                                      \
    class Name : public Error {                                        \
    public:                                                            \
        explicit Name(const std::string& what) : Error(#Name, what) {} \
    }

// prompt_engine
RECORD_DEFINE_ERROR(UnparsablePrompt);
RECORD_DEFINE_ERROR(TokenizationMismatch);

// attention_engine
RECORD_DEFINE_ERROR(ShapeMismatch);
RECORD_DEFINE_ERROR(ResolutionMismatch);
RECORD_DEFINE_ERROR(ValueOutOfRange);

// diffusion_backbone
RECORD_DEFINE_ERROR(BackboneFailure);
RECORD_DEFINE_ERROR(HookShapeMismatch);
RECORD_DEFINE_ERROR(ScheduleExhausted);
RECORD_DEFINE_ERROR(InvalidConfig);

// coarse_generator
RECORD_DEFINE_ERROR(CandidateCountZero);

// reasoning_agents
RECORD_DEFINE_ERROR(DegenerateMap);
RECORD_DEFINE_ERROR(NoHumanDetected);
RECORD_DEFINE_ERROR(InsufficientKeypoints);
RECORD_DEFINE_ERROR(VLMUnavailable);
RECORD_DEFINE_ERROR(InvalidBox);

class UnparsableAgentReply : public Error {
public:
    explicit UnparsableAgentReply(const std::string& what)
        : Error("UnparsableAgentReply", what) {}

protected:
    UnparsableAgentReply(std::string kind, const std::string& what)
        : Error(std::move(kind), what) {}
};

// A scraped box that parsed but violates the box invariants. Still an
// unparsable reply from the caller's point of view.
class BoxOutOfRange : public UnparsableAgentReply {
public:
    explicit BoxOutOfRange(const std::string& what)
        : UnparsableAgentReply("BoxOutOfRange", what) {}
};

// interaction_corrector
RECORD_DEFINE_ERROR(BoxTooSmall);
RECORD_DEFINE_ERROR(NonFiniteGradient);
RECORD_DEFINE_ERROR(DivergenceDetected);

// eval_harness
RECORD_DEFINE_ERROR(EmbedderUnavailable);
RECORD_DEFINE_ERROR(EmptyBatch);
RECORD_DEFINE_ERROR(PreconditionViolation);

// cli_runner
RECORD_DEFINE_ERROR(PromptFileMissing);
RECORD_DEFINE_ERROR(RunNotFound);
RECORD_DEFINE_ERROR(IoError);

#undef RECORD_DEFINE_ERROR

/// Wraps a module error with the pipeline stage that raised it.
class StageError : public Error {
public:
    StageError(std::string stage, const Error& inner)
        : Error(Raw{}, inner.kind(), "[" + stage + "] " + inner.what()), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace record
