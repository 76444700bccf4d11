from metastep.cli import main
import sys

sys.exit(main())
