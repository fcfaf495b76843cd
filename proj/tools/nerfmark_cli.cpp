// Placeholder entry point; subcommands are wired up once the modules land.
int main() { return 0; }
