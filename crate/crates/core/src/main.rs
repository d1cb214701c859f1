fn main() {
    std::process::exit(ldp_dap::bench::cli(std::env::args_os()));
}
