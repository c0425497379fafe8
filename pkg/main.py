from radsmith.cli.router import run

if __name__ == "__main__":
    run()
