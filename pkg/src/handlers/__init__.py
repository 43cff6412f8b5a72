# Handlers module - command-line subcommand handlers
