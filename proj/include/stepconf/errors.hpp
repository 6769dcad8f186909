#pragma once

#include <stdexcept>
#include <string>

namespace stepconf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define STEPCONF_ERROR(Name)                 \
    struct Name : Error {                    \
        using Error::Error;                  \
    }

// trajectory-model
STEPCONF_ERROR(AlreadyFinalized);
STEPCONF_ERROR(NonMonotonicTimestep);
STEPCONF_ERROR(IndexOutOfRange);
STEPCONF_ERROR(SinkFailure);
STEPCONF_ERROR(UnfinalizedTrajectory);
STEPCONF_ERROR(DimensionMismatch);

struct MalformedRecord : Error {
    explicit MalformedRecord(const std::string& what, long line = -1)
        : Error(line >= 0 ? "line " + std::to_string(line) + ": " + what : what), line_number(line) {}
    long line_number;
};

// env-sim
STEPCONF_ERROR(TerminatedEpisode);
STEPCONF_ERROR(EpisodeNotTerminated);
STEPCONF_ERROR(UnknownLayer);

// reward-mc
STEPCONF_ERROR(ReplayMismatch);
STEPCONF_ERROR(BudgetZero);

// conformal
STEPCONF_ERROR(OutOfRangeReward);
STEPCONF_ERROR(EmptyCalibration);
STEPCONF_ERROR(EmptyInput);
STEPCONF_ERROR(InsufficientCalibration);
STEPCONF_ERROR(StoreNotFrozen);

// probes
STEPCONF_ERROR(DegenerateDataset);
STEPCONF_ERROR(EmptyCell);

// steering
STEPCONF_ERROR(InsufficientExamples);
STEPCONF_ERROR(ZeroContrast);

// pipeline
STEPCONF_ERROR(ValidationError);
STEPCONF_ERROR(MissingStage);
STEPCONF_ERROR(StageFailure);

#undef STEPCONF_ERROR

}  // namespace stepconf
