// SPDX-License-Identifier: Apache-2.0 OR MIT

fn main() {
    std::process::exit(aipaging_cli::run(std::env::args_os()));
}
