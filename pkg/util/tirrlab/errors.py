# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0

# Exit codes used by the command line front-end.
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PROVENANCE = 3
EXIT_DIVERGENCE = 4


class TirrError(Exception):
    '''Root of all errors raised by the library.'''
    exit_code = EXIT_FAILURE

    def __init__(self, msg):
        super().__init__(msg)
        self.msg = msg

    def __str__(self):
        return self.msg


# Event log validation and splitting.
class BipartitenessViolation(TirrError):
    pass


class DanglingReciprocation(TirrError):
    pass


class DuplicateEvent(TirrError):
    pass


class EmptySplit(TirrError):
    pass


class EventLogFormatError(TirrError):
    '''An event log line could not be parsed.'''
    def __init__(self, path, line_no, msg):
        super().__init__('{}:{}: {}'.format(path, line_no, msg))


# Image preprocessing.
class DegenerateBbox(TirrError):
    pass


class SequenceTooLong(TirrError):
    pass


class MissingImage(TirrError):
    pass


# Models.
class UninitializedWeights(TirrError):
    pass


class InsufficientJudges(TirrError):
    pass


class EmptyPool(TirrError):
    pass


class Divergence(TirrError):
    exit_code = EXIT_DIVERGENCE


# Evaluation.
class DegenerateLabels(TirrError):
    pass


# Configuration and artifacts.
class ConfigError(TirrError):
    exit_code = EXIT_CONFIG


class UnsupportedVersion(TirrError):
    exit_code = EXIT_CONFIG


class IoFailure(TirrError):
    pass


class MissingUpstream(TirrError):
    pass


class ProvenanceError(TirrError):
    exit_code = EXIT_PROVENANCE


class SplitContamination(ProvenanceError):
    pass
