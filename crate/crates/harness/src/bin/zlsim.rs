fn main() {
    std::process::exit(zlsim_harness::cli::run(std::env::args_os()));
}
