//! Acceptance criteria for `clusterssd`, run as the `acceptance` test target.
