fn main() {
    std::process::exit(rfs_energy::cli::run(std::env::args_os()));
}
