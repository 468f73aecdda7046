from burstfuse.cli import main

main()
