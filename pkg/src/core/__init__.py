# Core module - grid model, power flow, measurements and errors
