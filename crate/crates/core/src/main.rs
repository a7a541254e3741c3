fn main() {
    std::process::exit(logstamp::cli::main());
}
