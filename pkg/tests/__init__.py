# si29-decoupling tests package
