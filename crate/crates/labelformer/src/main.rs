fn main() {
    labelformer::alloc_tuning::tune();
    std::process::exit(labelformer::cli::main_with_args(std::env::args_os()));
}
