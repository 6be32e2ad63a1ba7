# Package marker for unrect.CLI
