from uqshred.cli import main
import sys
sys.exit(main())
