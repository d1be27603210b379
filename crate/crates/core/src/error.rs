/*
Copyright 2026 The softarm Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
use thiserror::Error;

/// Problems loading or validating configuration files.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Jacobian evaluation failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum JacobianError {
    /// Every section is exactly straight; the bending directions are undefined
    /// and the arm cannot twist, so `J` loses rank. Perturb `q` first.
    #[error("all sections are straight; perturb the actuator state off the singular pose")]
    FullyStraightConfiguration,
}

/// Point-set registration failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistrationError {
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
}

/// Frame-chain failures when locating the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VisionError {
    #[error("target is occluded and has never been observed")]
    NoTargetEverSeen,
}
