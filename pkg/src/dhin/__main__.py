from dhin.cli import main

raise SystemExit(main())
