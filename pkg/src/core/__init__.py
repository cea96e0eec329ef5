# Core package for the TGM agent
